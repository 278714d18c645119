//! Image fingerprints and the classification memo keyed by them.
//!
//! Two fingerprints are provided:
//!
//! * **dHash**: the image is box-averaged onto a 9×8 grid and each of the
//!   64 horizontally adjacent cell pairs contributes one bit, set when the
//!   left cell is strictly brighter. Cheap, but any rotation or mirror
//!   changes the hash.
//! * **Moment invariants**: centroid-centered, scale-normalized complex
//!   moments `c_pq = Σ (x̃ + iỹ)^p (x̃ − iỹ)^q f(x, y)`. A rotation by θ
//!   multiplies `c_pq` by `e^{i(p−q)θ}` and a mirror conjugates it, so
//!   products whose phases cancel are invariant. Four of the six invariants
//!   below are real parts and therefore survive mirroring as well; their sum,
//!   rounded to nine significant digits, is the key.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{to_grayscale, ImageBuffer};

/// How the memory component fingerprints images, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMethod {
    None,
    Dhash,
    Moments,
}

impl MemoryMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMethod::None => "none",
            MemoryMethod::Dhash => "dhash",
            MemoryMethod::Moments => "moments",
        }
    }
}

impl fmt::Display for MemoryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MemoryMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(MemoryMethod::None),
            "dhash" => Ok(MemoryMethod::Dhash),
            "moments" => Ok(MemoryMethod::Moments),
            other => Err(format!("unknown memory method {other:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HashError {
    #[error("image is {width}x{height}; dhash needs at least 9x8")]
    TooSmall { width: usize, height: usize },
    #[error("zero total intensity")]
    ZeroIntensity,
    #[error("memory method none has no fingerprint")]
    NoMethod,
    #[error("invalid fingerprint key {0:?}")]
    InvalidKey(String),
}

/// Memo key for an image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fingerprint {
    DHash(u64),
    Moments(String),
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fingerprint::DHash(bits) => write!(f, "dhash:{bits:016x}"),
            Fingerprint::Moments(key) => write!(f, "moments:{key}"),
        }
    }
}

impl FromStr for Fingerprint {
    type Err = HashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || HashError::InvalidKey(s.to_string());
        match s.split_once(':') {
            Some(("dhash", hex)) if hex.len() == 16 => u64::from_str_radix(hex, 16)
                .map(Fingerprint::DHash)
                .map_err(|_| invalid()),
            Some(("moments", key)) if key.parse::<f64>().is_ok() => {
                Ok(Fingerprint::Moments(key.to_string()))
            }
            _ => Err(invalid()),
        }
    }
}

const GRID_COLS: usize = 9;
const GRID_ROWS: usize = 8;

/// Difference hash of an image (converted to gray first).
///
/// Cell `c` of the 9-column grid covers columns `floor(c·W/9)` up to
/// `floor((c+1)·W/9)`, rows likewise with 8 bins. Brightness comparisons use
/// exact integer sums, so the hash is identical on every platform. Bit
/// `r·8 + c` is packed most-significant first.
pub fn dhash(image: &ImageBuffer) -> Result<u64, HashError> {
    let gray = to_grayscale(image);
    let (w, h) = (gray.width(), gray.height());
    if w < GRID_COLS || h < GRID_ROWS {
        return Err(HashError::TooSmall {
            width: w,
            height: h,
        });
    }
    let col_bin = |k: usize| k * w / GRID_COLS;
    let row_bin = |k: usize| k * h / GRID_ROWS;

    let pixels = gray.pixels();
    let mut sums = [[0u64; GRID_COLS]; GRID_ROWS];
    let mut counts = [[0u64; GRID_COLS]; GRID_ROWS];
    for r in 0..GRID_ROWS {
        for y in row_bin(r)..row_bin(r + 1) {
            let row = &pixels[y * w..(y + 1) * w];
            for c in 0..GRID_COLS {
                let cells = &row[col_bin(c)..col_bin(c + 1)];
                sums[r][c] += cells.iter().map(|&v| v as u64).sum::<u64>();
                counts[r][c] += cells.len() as u64;
            }
        }
    }

    let mut bits = 0u64;
    for r in 0..GRID_ROWS {
        for c in 0..GRID_COLS - 1 {
            let left = sums[r][c] as u128 * counts[r][c + 1] as u128;
            let right = sums[r][c + 1] as u128 * counts[r][c] as u128;
            if left > right {
                bits |= 1 << (63 - (r * 8 + c));
            }
        }
    }
    Ok(bits)
}

/// Centroid and mass of a gray image, with pixel values as weights.
struct Centered<'a> {
    gray: &'a ImageBuffer,
    mass: f64,
    cx: f64,
    cy: f64,
}

impl<'a> Centered<'a> {
    fn new(gray: &'a ImageBuffer) -> Result<Self, HashError> {
        let (mut mass, mut sx, mut sy) = (0u64, 0u64, 0u64);
        for y in 0..gray.height() {
            for x in 0..gray.width() {
                let f = gray.get(x, y, 0) as u64;
                mass += f;
                sx += f * x as u64;
                sy += f * y as u64;
            }
        }
        if mass == 0 {
            return Err(HashError::ZeroIntensity);
        }
        let m = mass as f64;
        Ok(Centered {
            gray,
            mass: m,
            cx: sx as f64 / m,
            cy: sy as f64 / m,
        })
    }

    /// Normalized central complex moments for every `(p, q)` in `orders`.
    fn moments<const N: usize>(&self, orders: [(u32, u32); N]) -> [Complex64; N] {
        let mut acc = [Complex64::new(0.0, 0.0); N];
        for y in 0..self.gray.height() {
            for x in 0..self.gray.width() {
                let f = self.gray.get(x, y, 0);
                if f == 0 {
                    continue;
                }
                let z = Complex64::new(x as f64 - self.cx, y as f64 - self.cy);
                let zc = z.conj();
                let f = f as f64;
                for (slot, &(p, q)) in acc.iter_mut().zip(&orders) {
                    *slot += z.powu(p) * zc.powu(q) * f;
                }
            }
        }
        for (slot, &(p, q)) in acc.iter_mut().zip(&orders) {
            *slot /= self.mass.powf((p + q) as f64 / 2.0 + 1.0);
        }
        acc
    }
}

/// Central complex moment `c_pq` normalized by `m00^((p+q)/2 + 1)`.
///
/// `p + q` is expected to be at most 3.
pub fn complex_moment(image: &ImageBuffer, p: u32, q: u32) -> Result<Complex64, HashError> {
    let gray = to_grayscale(image);
    let [c] = Centered::new(&gray)?.moments([(p, q)]);
    Ok(c)
}

/// The six rotation invariants `φ1..φ6`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentInvariants {
    pub phi: [f64; 6],
}

impl MomentInvariants {
    /// Sum of the mirror-invariant subset `φ1 + φ2 + φ3 + φ5`.
    pub fn mirror_invariant_sum(&self) -> f64 {
        self.phi[0] + self.phi[1] + self.phi[2] + self.phi[4]
    }
}

/// `φ1 = c11`, `φ2 = |c21|²`, `φ3 + iφ4 = c20·c12²`, `φ5 + iφ6 = c30·c12³`.
pub fn moment_invariants(image: &ImageBuffer) -> Result<MomentInvariants, HashError> {
    let gray = to_grayscale(image);
    let [c11, c21, c12, c20, c30] =
        Centered::new(&gray)?.moments([(1, 1), (2, 1), (1, 2), (2, 0), (3, 0)]);
    let third = c20 * c12 * c12;
    let fifth = c30 * c12 * c12 * c12;
    Ok(MomentInvariants {
        phi: [
            c11.re,
            (c21 * c12).re,
            third.re,
            third.im,
            fifth.re,
            fifth.im,
        ],
    })
}

/// Canonical decimal rendering of `value` rounded to nine significant
/// digits: no trailing zeros, leading `-` for negatives, `0` for zero.
pub fn quantize_key(value: f64) -> String {
    let rounded: f64 = format!("{value:.8e}").parse().expect("float formatting parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

/// Moment-invariant fingerprint with its pre-quantization invariants.
pub fn moments_fingerprint(image: &ImageBuffer) -> Result<(Fingerprint, MomentInvariants), HashError> {
    let inv = moment_invariants(image)?;
    Ok((Fingerprint::Moments(quantize_key(inv.mirror_invariant_sum())), inv))
}

/// Fingerprint of `image` under `method`.
pub fn fingerprint(image: &ImageBuffer, method: MemoryMethod) -> Result<Fingerprint, HashError> {
    match method {
        MemoryMethod::None => Err(HashError::NoMethod),
        MemoryMethod::Dhash => dhash(image).map(Fingerprint::DHash),
        MemoryMethod::Moments => moments_fingerprint(image).map(|(fp, _)| fp),
    }
}

#[derive(Debug, Clone)]
struct Slot {
    label: usize,
    tick: u64,
}

/// Fingerprint → label memo with optional least-recently-used eviction.
#[derive(Debug, Clone, Default)]
pub struct MemoStore {
    capacity: Option<usize>,
    entries: HashMap<Fingerprint, Slot>,
    recency: BTreeMap<u64, Fingerprint>,
    clock: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedStore {
    entries: Vec<PersistedEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedEntry {
    key: String,
    label: usize,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid store file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Key(#[from] HashError),
}

impl MemoStore {
    /// Unbounded store.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        MemoStore {
            capacity: Some(capacity),
            ..Self::default()
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn touch(&mut self, fp: &Fingerprint) {
        self.clock += 1;
        let slot = self.entries.get_mut(fp).expect("touched key exists");
        self.recency.remove(&slot.tick);
        slot.tick = self.clock;
        self.recency.insert(self.clock, fp.clone());
    }

    /// Stored label for `fp`; a hit marks the entry as recently used.
    pub fn lookup(&mut self, fp: &Fingerprint) -> Option<usize> {
        let label = self.entries.get(fp)?.label;
        self.touch(fp);
        Some(label)
    }

    /// Label for `fp` without touching recency.
    pub fn peek(&self, fp: &Fingerprint) -> Option<usize> {
        self.entries.get(fp).map(|s| s.label)
    }

    /// Stores `label` under `fp`, replacing any previous label and evicting
    /// the least recently used entry when full.
    pub fn insert(&mut self, fp: Fingerprint, label: usize) {
        if let Some(slot) = self.entries.get_mut(&fp) {
            slot.label = label;
            self.touch(&fp);
            return;
        }
        if let Some(cap) = self.capacity {
            if cap == 0 {
                return;
            }
            while self.entries.len() >= cap {
                let (_, oldest) = self.recency.pop_first().expect("nonempty store");
                self.entries.remove(&oldest);
            }
        }
        self.clock += 1;
        self.recency.insert(self.clock, fp.clone());
        self.entries.insert(
            fp,
            Slot {
                label,
                tick: self.clock,
            },
        );
    }

    /// Entries from least to most recently used.
    pub fn entries(&self) -> impl Iterator<Item = (&Fingerprint, usize)> {
        self.recency.values().map(|fp| (fp, self.entries[fp].label))
    }

    /// `{"entries": [{"key": ..., "label": ...}]}`, oldest first.
    pub fn to_json(&self) -> String {
        let persisted = PersistedStore {
            entries: self
                .entries()
                .map(|(fp, label)| PersistedEntry {
                    key: fp.to_string(),
                    label,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&persisted).expect("store serializes")
    }

    /// Loads a persisted store; entries are replayed in file order, so
    /// recency survives a round trip.
    pub fn from_json(text: &str, capacity: Option<usize>) -> Result<Self, StoreError> {
        let persisted: PersistedStore = serde_json::from_str(text)?;
        let mut store = MemoStore {
            capacity,
            ..Self::default()
        };
        for entry in persisted.entries {
            store.insert(entry.key.parse()?, entry.label);
        }
        Ok(store)
    }
}

/// A [`MemoStore`] shareable across threads. Every operation holds the lock
/// for its whole duration, so readers see either no entry or a complete one.
#[derive(Debug, Default)]
pub struct SharedMemoStore(Mutex<MemoStore>);

impl SharedMemoStore {
    pub fn new(store: MemoStore) -> Self {
        SharedMemoStore(Mutex::new(store))
    }

    pub fn lookup(&self, fp: &Fingerprint) -> Option<usize> {
        self.0.lock().expect("memo lock poisoned").lookup(fp)
    }

    pub fn insert(&self, fp: Fingerprint, label: usize) {
        self.0.lock().expect("memo lock poisoned").insert(fp, label)
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("memo lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_inner(self) -> MemoStore {
        self.0.into_inner().expect("memo lock poisoned")
    }
}
