//! Bitpacked hash codes, Hamming-distance scoring and top-K ranking.
//!
//! Codes live in `{-1,+1}^m` conceptually and are stored as machine words
//! with bit j set iff the j-th component is +1. User-item relevance is the
//! inner product, which relates to the Hamming distance `h` as `m - 2h`, so
//! ranking by ascending distance equals ranking by descending inner product.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, stream};

/// Largest supported code length in bits.
pub const MAX_BITS: usize = 512;

pub fn words_for(m: usize) -> usize {
    m.div_ceil(64)
}

/// One m-bit code. Bits above position `m` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    m: u32,
    words: Vec<u64>,
}

impl HashCode {
    /// Packs a `{-1,+1}` vector; bit j is set iff `z[j] == +1`.
    pub fn pack(z: &[f64]) -> Result<HashCode> {
        if z.is_empty() || z.len() > MAX_BITS {
            return Err(Error::Argument(format!(
                "code length must be in 1..={MAX_BITS}, got {}",
                z.len()
            )));
        }
        let mut words = vec![0u64; words_for(z.len())];
        for (j, &v) in z.iter().enumerate() {
            if v == 1.0 {
                words[j / 64] |= 1u64 << (j % 64);
            } else if v != -1.0 {
                return Err(Error::Argument(format!("code entry {j} is {v}, expected -1 or +1")));
            }
        }
        Ok(HashCode { m: z.len() as u32, words })
    }

    /// Inverse of [`pack`](HashCode::pack).
    pub fn unpack(&self) -> Vec<f64> {
        (0..self.m as usize)
            .map(|j| if self.words[j / 64] >> (j % 64) & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }

    pub fn from_words(m: usize, words: Vec<u64>) -> Result<HashCode> {
        if m == 0 || m > MAX_BITS || words.len() != words_for(m) {
            return Err(Error::Argument(format!(
                "bad word count {} for m={m}",
                words.len()
            )));
        }
        if m % 64 != 0 && words[words.len() - 1] >> (m % 64) != 0 {
            return Err(Error::Argument("bits above position m must be zero".into()));
        }
        Ok(HashCode { m: m as u32, words })
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of differing bits: popcount of XOR.
pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.m != b.m {
        return Err(Error::Argument(format!("code length mismatch: {} vs {}", a.m, b.m)));
    }
    Ok(hamming_words(&a.words, &b.words))
}

/// Inner product of the corresponding `{-1,+1}` vectors: `m - 2h`.
pub fn inner_from_hamming(m: usize, h: u32) -> Result<i64> {
    if h as usize > m {
        return Err(Error::Argument(format!("hamming distance {h} exceeds code length {m}")));
    }
    Ok(m as i64 - 2 * h as i64)
}

/// All user and item codes of one trained model, bitpacked and contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBook {
    m: usize,
    words_per_code: usize,
    num_users: usize,
    num_items: usize,
    user_words: Vec<u64>,
    item_words: Vec<u64>,
}

const CODEBOOK_MAGIC: &[u8; 4] = b"NHCB";
const CODEBOOK_VERSION: u32 = 1;

impl CodeBook {
    pub fn zeroed(m: usize, num_users: usize, num_items: usize) -> Result<CodeBook> {
        if m == 0 || m > MAX_BITS {
            return Err(Error::Argument(format!("code length must be in 1..={MAX_BITS}, got {m}")));
        }
        let wpc = words_for(m);
        Ok(CodeBook {
            m,
            words_per_code: wpc,
            num_users,
            num_items,
            user_words: vec![0; num_users * wpc],
            item_words: vec![0; num_items * wpc],
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn set_user(&mut self, user: u32, code: &HashCode) -> Result<()> {
        if code.m() != self.m {
            return Err(Error::Shape(format!("code has m={}, book has m={}", code.m(), self.m)));
        }
        let span = self.user_span(user)?;
        self.user_words[span.clone()].copy_from_slice(code.words());
        Ok(())
    }

    pub fn set_item(&mut self, item: u32, code: &HashCode) -> Result<()> {
        if code.m() != self.m {
            return Err(Error::Shape(format!("code has m={}, book has m={}", code.m(), self.m)));
        }
        let span = self.item_span(item)?;
        self.item_words[span.clone()].copy_from_slice(code.words());
        Ok(())
    }

    pub fn user_code(&self, user: u32) -> Result<&[u64]> {
        let span = self.user_span(user)?;
        Ok(&self.user_words[span])
    }

    pub fn item_code(&self, item: u32) -> Result<&[u64]> {
        let span = self.item_span(item)?;
        Ok(&self.item_words[span])
    }

    fn user_span(&self, user: u32) -> Result<std::ops::Range<usize>> {
        if user as usize >= self.num_users {
            return Err(Error::Index(format!("user {user} (codebook has {} users)", self.num_users)));
        }
        let s = user as usize * self.words_per_code;
        Ok(s..s + self.words_per_code)
    }

    fn item_span(&self, item: u32) -> Result<std::ops::Range<usize>> {
        if item as usize >= self.num_items {
            return Err(Error::Index(format!("item {item} (codebook has {} items)", self.num_items)));
        }
        let s = item as usize * self.words_per_code;
        Ok(s..s + self.words_per_code)
    }

    /// Layout: magic, version, m, user count, item count, then the bitpacked
    /// codes little-endian, users first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_all(&CODEBOOK_VERSION.to_le_bytes())?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&(self.num_users as u64).to_le_bytes())?;
        w.write_all(&(self.num_items as u64).to_le_bytes())?;
        for word in self.user_words.iter().chain(self.item_words.iter()) {
            w.write_all(&word.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CodeBook> {
        let bad = |message: &str| Error::Format {
            path: path.display().to_string(),
            message: message.to_string(),
        };
        let mut r = BufReader::new(
            File::open(path).map_err(|_| Error::MissingInput(path.display().to_string()))?,
        );
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(bad("bad magic"));
        }
        if read_u32(&mut r)? != CODEBOOK_VERSION {
            return Err(bad("unsupported version"));
        }
        let m = read_u32(&mut r)? as usize;
        let num_users = read_u64(&mut r)? as usize;
        let num_items = read_u64(&mut r)? as usize;
        let mut book = CodeBook::zeroed(m, num_users, num_items)
            .map_err(|_| bad("bad code length"))?;
        for word in book.user_words.iter_mut().chain(book.item_words.iter_mut()) {
            *word = read_u64(&mut r)?;
        }
        Ok(book)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Ranks `candidates` by ascending Hamming distance to `user`, ties broken by
/// ascending item id so the order is total.
pub fn rank_items(user: &HashCode, book: &CodeBook, candidates: &[u32]) -> Result<Vec<u32>> {
    if user.m() != book.m() {
        return Err(Error::Shape(format!(
            "user code has m={}, book has m={}",
            user.m(),
            book.m()
        )));
    }
    let mut scored: Vec<(u32, u32)> = candidates
        .iter()
        .map(|&id| Ok((hamming_words(user.words(), book.item_code(id)?), id)))
        .collect::<Result<_>>()?;
    scored.sort_unstable();
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Scan benchmark configuration. Timings cover scoring only; code and vector
/// generation happen before the clock starts.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub m: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Refuse to allocate more than this many bytes for the inputs.
    pub memory_budget_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            num_users: 1000,
            num_items: 100_000,
            m: 64,
            repetitions: 10,
            seed: 0,
            memory_budget_bytes: 4 << 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub num_users: usize,
    pub num_items: usize,
    pub m: usize,
    pub repetitions: usize,
    /// Mean seconds per full users x items Hamming scan.
    pub hamming_seconds: f64,
    /// Mean seconds per full users x items float inner-product scan.
    pub inner_seconds: f64,
    pub speedup: f64,
    pub hamming_checksum: u64,
    pub inner_checksum: f64,
}

/// Times an all-pairs user-to-item scoring scan over bitpacked codes against
/// the same scan over dense `f64` vectors of the same dimension. Single
/// threaded: the comparison is per-operation cost, not parallel throughput.
/// Checksums accumulate every score so the scans cannot be optimized away.
pub fn bench_scan(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.num_users == 0 || cfg.num_items == 0 || cfg.repetitions == 0 {
        return Err(Error::Argument("bench sizes and repetitions must be >= 1".into()));
    }
    if cfg.m == 0 || cfg.m > MAX_BITS {
        return Err(Error::Argument(format!("code length must be in 1..={MAX_BITS}, got {}", cfg.m)));
    }
    let wpc = words_for(cfg.m);
    let code_bytes = (cfg.num_users + cfg.num_items) as u64 * wpc as u64 * 8;
    let vec_bytes = (cfg.num_users + cfg.num_items) as u64 * cfg.m as u64 * 8;
    let estimate = code_bytes + vec_bytes;
    if estimate > cfg.memory_budget_bytes {
        return Err(Error::Resource(format!(
            "bench inputs need {estimate} bytes, budget is {}",
            cfg.memory_budget_bytes
        )));
    }

    let mut rng = stream_rng(cfg.seed, stream::BENCH);
    let mask = if cfg.m % 64 == 0 { u64::MAX } else { (1u64 << (cfg.m % 64)) - 1 };
    let gen_codes = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<u64> {
        (0..n * wpc)
            .map(|i| {
                let w: u64 = rng.random();
                if i % wpc == wpc - 1 { w & mask } else { w }
            })
            .collect()
    };
    let user_codes = gen_codes(&mut rng, cfg.num_users);
    let item_codes = gen_codes(&mut rng, cfg.num_items);
    let gen_vecs = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n * cfg.m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    };
    let user_vecs = gen_vecs(&mut rng, cfg.num_users);
    let item_vecs = gen_vecs(&mut rng, cfg.num_items);

    let mut hamming_total = 0.0;
    let mut hamming_checksum = 0u64;
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        hamming_checksum = hamming_scan(&user_codes, &item_codes, wpc);
        hamming_total += start.elapsed().as_secs_f64();
    }

    let mut inner_total = 0.0;
    let mut inner_checksum = 0.0;
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        inner_checksum = inner_scan(&user_vecs, &item_vecs, cfg.m);
        inner_total += start.elapsed().as_secs_f64();
    }

    let hamming_seconds = hamming_total / cfg.repetitions as f64;
    let inner_seconds = inner_total / cfg.repetitions as f64;
    Ok(BenchReport {
        num_users: cfg.num_users,
        num_items: cfg.num_items,
        m: cfg.m,
        repetitions: cfg.repetitions,
        hamming_seconds,
        inner_seconds,
        speedup: inner_seconds / hamming_seconds,
        hamming_checksum,
        inner_checksum,
    })
}

/// All-pairs Hamming scan over flat bitpacked codes (`words_per_code` words
/// each); returns the wrapping sum of every distance.
pub fn hamming_scan(user_codes: &[u64], item_codes: &[u64], words_per_code: usize) -> u64 {
    let mut acc = 0u64;
    for uw in user_codes.chunks_exact(words_per_code) {
        let mut user_acc = 0u64;
        for iw in item_codes.chunks_exact(words_per_code) {
            user_acc = user_acc.wrapping_add(hamming_words(uw, iw) as u64);
        }
        acc = acc.wrapping_add(user_acc);
    }
    acc
}

/// All-pairs inner-product scan over flat dense vectors of dimension `m`;
/// returns the sum of every score.
pub fn inner_scan(user_vecs: &[f64], item_vecs: &[f64], m: usize) -> f64 {
    let mut acc = 0.0f64;
    for uv in user_vecs.chunks_exact(m) {
        let mut user_acc = 0.0f64;
        for iv in item_vecs.chunks_exact(m) {
            user_acc += scan_dot(uv, iv);
        }
        acc += user_acc;
    }
    acc
}

/// Pairwise-accumulated dot product, the float side of the scan comparison.
#[inline]
fn scan_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut even = 0.0f64;
    let mut odd = 0.0f64;
    let n = a.len() / 2 * 2;
    let mut k = 0;
    while k < n {
        even += a[k] * b[k];
        odd += a[k + 1] * b[k + 1];
        k += 2;
    }
    if n < a.len() {
        even += a[n] * b[n];
    }
    even + odd
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code_from_byte(m: usize, byte: u64) -> HashCode {
        HashCode::from_words(m, vec![byte]).unwrap()
    }

    #[test]
    fn pack_all_plus_one() {
        let z = vec![1.0; 16];
        let code = HashCode::pack(&z).unwrap();
        assert_eq!(code.words(), &[0x0000_FFFF]);
    }

    #[test]
    fn pack_all_minus_one() {
        let z = vec![-1.0; 16];
        let code = HashCode::pack(&z).unwrap();
        assert_eq!(code.words(), &[0]);
    }

    #[test]
    fn pack_rejects_other_values() {
        assert!(HashCode::pack(&[1.0, 0.5]).is_err());
        assert!(HashCode::pack(&[]).is_err());
    }

    #[test]
    fn hamming_identity_and_complement() {
        let a = code_from_byte(8, 0b1011_0010);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        let not_a = code_from_byte(8, !0b1011_0010u64 & 0xFF);
        assert_eq!(hamming(&a, &not_a).unwrap(), 8);
    }

    #[test]
    fn hamming_counts_differing_bits() {
        // Oracle: compare the two bit strings position by position.
        let (x, y) = (0b1011_0010u64, 0b1001_1010u64);
        let expected = (0..8).filter(|j| (x >> j) & 1 != (y >> j) & 1).count() as u32;
        let a = code_from_byte(8, x);
        let b = code_from_byte(8, y);
        assert_eq!(hamming(&a, &b).unwrap(), expected);
        assert_eq!(expected, 2);
    }

    #[test]
    fn hamming_rejects_mismatched_lengths() {
        let a = code_from_byte(8, 1);
        let b = code_from_byte(9, 1);
        assert!(hamming(&a, &b).is_err());
    }

    #[test]
    fn inner_from_hamming_endpoints() {
        assert_eq!(inner_from_hamming(16, 0).unwrap(), 16);
        assert_eq!(inner_from_hamming(16, 16).unwrap(), -16);
        assert_eq!(inner_from_hamming(16, 4).unwrap(), 8);
        assert!(inner_from_hamming(16, 17).is_err());
    }

    #[test]
    fn rank_single_candidate_and_self_match() {
        let mut book = CodeBook::zeroed(8, 1, 3).unwrap();
        let user = code_from_byte(8, 0b1100_0011);
        book.set_item(0, &code_from_byte(8, 0b0000_0000)).unwrap();
        book.set_item(1, &user).unwrap();
        book.set_item(2, &code_from_byte(8, 0b1100_0001)).unwrap();
        assert_eq!(rank_items(&user, &book, &[2]).unwrap(), vec![2]);
        assert_eq!(rank_items(&user, &book, &[0, 1, 2]).unwrap(), vec![1, 2, 0]);
        assert!(rank_items(&user, &book, &[]).unwrap().is_empty());
    }

    #[test]
    fn rank_matches_dot_product_sort() {
        // Oracle: sort by descending float dot product of the unpacked
        // vectors with the same ascending-id tie rule.
        let mut rng = stream_rng(11, stream::BENCH);
        let m = 16;
        let mut book = CodeBook::zeroed(m, 1, 20).unwrap();
        let user_bits: Vec<f64> =
            (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let user = HashCode::pack(&user_bits).unwrap();
        let mut codes = Vec::new();
        for i in 0..20u32 {
            let bits: Vec<f64> =
                (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let code = HashCode::pack(&bits).unwrap();
            book.set_item(i, &code).unwrap();
            codes.push(bits);
        }
        let candidates: Vec<u32> = (0..20).collect();
        let got = rank_items(&user, &book, &candidates).unwrap();

        let mut expected: Vec<(i64, u32)> = codes
            .iter()
            .enumerate()
            .map(|(i, bits)| {
                let d: f64 = bits.iter().zip(&user_bits).map(|(a, b)| a * b).sum();
                (-(d as i64), i as u32)
            })
            .collect();
        expected.sort_unstable();
        let expected: Vec<u32> = expected.into_iter().map(|(_, i)| i).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn bench_tiny_is_well_formed() {
        let cfg = BenchConfig {
            num_users: 1,
            num_items: 1,
            m: 64,
            repetitions: 2,
            seed: 3,
            memory_budget_bytes: 1 << 20,
        };
        let report = bench_scan(&cfg).unwrap();
        assert!(report.hamming_seconds.is_finite() && report.hamming_seconds >= 0.0);
        assert!(report.inner_seconds.is_finite() && report.inner_seconds >= 0.0);
    }

    #[test]
    fn bench_respects_memory_budget() {
        let cfg = BenchConfig {
            num_users: 1_000_000,
            num_items: 1_000_000,
            m: 512,
            repetitions: 1,
            seed: 0,
            memory_budget_bytes: 1 << 20,
        };
        assert!(matches!(bench_scan(&cfg), Err(Error::Resource(_))));
    }

    #[test]
    fn codebook_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut book = CodeBook::zeroed(24, 2, 3).unwrap();
        book.set_user(0, &HashCode::pack(&vec![1.0; 24]).unwrap()).unwrap();
        book.set_item(2, &HashCode::pack(&vec![-1.0; 24]).unwrap()).unwrap();
        let path = dir.path().join("codes.bin");
        book.save(&path).unwrap();
        assert_eq!(CodeBook::load(&path).unwrap(), book);
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(bits in proptest::collection::vec(proptest::bool::ANY, 1..512)) {
            let z: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
            let code = HashCode::pack(&z).unwrap();
            prop_assert_eq!(code.unpack(), z);
        }

        #[test]
        fn metric_axioms_and_inner_identity(
            a in proptest::collection::vec(proptest::bool::ANY, 64),
            b in proptest::collection::vec(proptest::bool::ANY, 64),
            c in proptest::collection::vec(proptest::bool::ANY, 64),
        ) {
            let to_code = |bits: &[bool]| {
                let z: Vec<f64> = bits.iter().map(|&x| if x { 1.0 } else { -1.0 }).collect();
                (HashCode::pack(&z).unwrap(), z)
            };
            let (ca, za) = to_code(&a);
            let (cb, zb) = to_code(&b);
            let (cc, _) = to_code(&c);
            let hab = hamming(&ca, &cb).unwrap();
            let hba = hamming(&cb, &ca).unwrap();
            let hac = hamming(&ca, &cc).unwrap();
            let hbc = hamming(&cb, &cc).unwrap();
            prop_assert_eq!(hamming(&ca, &ca).unwrap(), 0);
            prop_assert_eq!(hab, hba);
            prop_assert!(hac <= hab + hbc);
            let dot: f64 = za.iter().zip(&zb).map(|(x, y)| x * y).sum();
            prop_assert_eq!(dot as i64, inner_from_hamming(64, hab).unwrap());
        }

        #[test]
        fn ranking_is_permutation(seed in 0u64..1000) {
            let mut rng = stream_rng(seed, stream::BENCH);
            let m = 32;
            let n = 15u32;
            let mut book = CodeBook::zeroed(m, 1, n as usize).unwrap();
            let random_bits = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
            };
            let user = HashCode::pack(&random_bits(&mut rng)).unwrap();
            for i in 0..n {
                book.set_item(i, &HashCode::pack(&random_bits(&mut rng)).unwrap()).unwrap();
            }
            let candidates: Vec<u32> = (0..n).collect();
            let mut ranked = rank_items(&user, &book, &candidates).unwrap();
            ranked.sort_unstable();
            prop_assert_eq!(ranked, candidates);
        }
    }
}
