//! Dataset generation over an AWGN channel, with optional root-raised-cosine
//! pulse shaping and matched filtering, plus the binary dataset file format.
//!
//! SNR is Es/N0 with unit symbol energy, so the complex noise variance at the
//! symbol-rate output is `10^(−snr_db/10)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"HDMAPDS1";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrcConfig {
    pub rolloff: f64,
    pub span_symbols: usize,
    pub samples_per_symbol: usize,
}

impl Default for RrcConfig {
    fn default() -> Self {
        RrcConfig { rolloff: 0.25, span_symbols: 10, samples_per_symbol: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub block_size: usize,
    /// Total sequences per constellation, split 80/10/10 into train/val/test.
    pub sequences_per_constellation: usize,
    pub rrc: Option<RrcConfig>,
    pub rng_seed: u64,
    /// Disables noise entirely (infinite SNR).
    pub noiseless: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            snr_db_min: -5.0,
            snr_db_max: 30.0,
            block_size: 1024,
            sequences_per_constellation: 200,
            rrc: None,
            rng_seed: 0,
            noiseless: false,
        }
    }
}

impl ChannelConfig {
    /// Full-scale setting: 10000 sequences of 2048 symbols.
    pub fn full_scale() -> Self {
        ChannelConfig { block_size: 2048, sequences_per_constellation: 10_000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.snr_db_min.is_finite() && self.snr_db_max.is_finite() && self.snr_db_min <= self.snr_db_max) {
            return Err(Error::Domain(format!(
                "empty SNR range [{}, {}]",
                self.snr_db_min, self.snr_db_max
            )));
        }
        if self.block_size == 0 {
            return Err(Error::Domain("block_size must be at least 1".into()));
        }
        if let Some(rrc) = &self.rrc {
            if !(rrc.rolloff > 0.0 && rrc.rolloff <= 1.0) {
                return Err(Error::Domain(format!("rolloff {} outside (0, 1]", rrc.rolloff)));
            }
            if rrc.span_symbols == 0 || rrc.samples_per_symbol == 0 {
                return Err(Error::Domain("RRC span and samples per symbol must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn num_sequences(&self, split: Split) -> usize {
        let n = self.sequences_per_constellation;
        let tenth = n / 10;
        match split {
            Split::Train => n - 2 * tenth,
            Split::Val | Split::Test => tenth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub snr_db: f64,
    pub symbols: Vec<u16>,
    pub rx: Vec<Complex32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub constellation_id: String,
    pub split: Split,
    pub block_size: usize,
    pub seed: u64,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn num_samples(&self) -> usize {
        self.sequences.len() * self.block_size
    }

    /// `(snr_db, symbol, rx)` for every sample, sequence by sequence.
    pub fn samples(&self) -> impl Iterator<Item = (f64, usize, Complex32)> + '_ {
        self.sequences
            .iter()
            .flat_map(|s| s.symbols.iter().zip(&s.rx).map(move |(&sym, &x)| (s.snr_db, sym as usize, x)))
    }
}

/// Complex noise variance for an Es/N0 of `snr_db` with unit symbol energy.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// RNG for one sequence: keyed by (seed, constellation, split), streamed by sequence index.
pub fn sequence_rng(seed: u64, constellation_id: &str, split: Split, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(fnv1a(constellation_id) ^ splitmix64(split.tag())));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Unnormalized root-raised-cosine impulse response at `t` symbol periods.
fn rrc_value(t: f64, b: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0 - b + 4.0 * b / PI
    } else if ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
        b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
    } else {
        ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
            / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
    }
}

/// Unit-energy root-raised-cosine taps, `span·sps + 1` long and symmetric.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, samples_per_symbol: usize) -> Vec<f64> {
    let len = span_symbols * samples_per_symbol + 1;
    let half = (len / 2) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|k| rrc_value((k as f64 - half) / samples_per_symbol as f64, rolloff))
        .collect();
    let energy = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= energy);
    taps
}

/// Full linear convolution of a complex signal with real taps.
pub fn convolve(signal: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    if signal.is_empty() || taps.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); signal.len() + taps.len() - 1];
    for (i, &x) in signal.iter().enumerate() {
        if x == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (j, &h) in taps.iter().enumerate() {
            out[i + j] += x * h;
        }
    }
    out
}

/// Pulse-shapes `symbols`, adds white noise of per-sample variance
/// `noise_var`, matched-filters, and samples with perfect timing.
fn rrc_link<R: Rng>(symbols: &[Complex64], rrc: &RrcConfig, noise_var: Option<f64>, rng: &mut R) -> Vec<Complex64> {
    let sps = rrc.samples_per_symbol;
    let taps = rrc_taps(rrc.rolloff, rrc.span_symbols, sps);
    let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
    for (k, &s) in symbols.iter().enumerate() {
        up[k * sps] = s;
    }
    let mut tx = convolve(&up, &taps);
    if let Some(v) = noise_var {
        // with unit-energy taps the matched-filter output noise variance equals the input per-sample variance
        tx.iter_mut().for_each(|x| *x += complex_gaussian(rng, v));
    }
    let rx = convolve(&tx, &taps);
    let delay = taps.len() - 1;
    (0..symbols.len()).map(|k| rx[delay + k * sps]).collect()
}

fn generate_sequence(c: &Constellation, config: &ChannelConfig, split: Split, index: usize) -> Sequence {
    let mut rng = sequence_rng(config.rng_seed, c.id(), split, index as u64);
    let snr_db = if config.snr_db_max > config.snr_db_min {
        rng.random_range(config.snr_db_min..config.snr_db_max)
    } else {
        config.snr_db_min
    };
    let symbols: Vec<u16> = (0..config.block_size).map(|_| rng.random_range(0..c.len()) as u16).collect();
    let tx: Vec<Complex64> = symbols.iter().map(|&s| c.points()[s as usize]).collect();
    let noise_var = (!config.noiseless).then(|| noise_variance(snr_db));
    let rx = match &config.rrc {
        Some(rrc) => rrc_link(&tx, rrc, noise_var, &mut rng),
        None => match noise_var {
            Some(v) => tx.iter().map(|&x| x + complex_gaussian(&mut rng, v)).collect(),
            None => tx,
        },
    };
    Sequence {
        snr_db,
        symbols,
        rx: rx.into_iter().map(|x| Complex32::new(x.re as f32, x.im as f32)).collect(),
    }
}

/// Generates the `split` portion of a constellation's data.
pub fn generate_dataset(c: &Constellation, config: &ChannelConfig, split: Split) -> Result<Dataset> {
    generate_sequences(c, config, split, config.num_sequences(split))
}

/// Generates exactly `count` sequences for `split`.
pub fn generate_sequences(c: &Constellation, config: &ChannelConfig, split: Split, count: usize) -> Result<Dataset> {
    config.validate()?;
    if c.len() > u16::MAX as usize + 1 {
        return Err(Error::Domain(format!("`{}` has too many symbols for u16 indices", c.id())));
    }
    Ok(Dataset {
        constellation_id: c.id().to_string(),
        split,
        block_size: config.block_size,
        seed: config.rng_seed,
        sequences: (0..count).map(|i| generate_sequence(c, config, split, i)).collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    constellation_id: String,
    split: Split,
    block_size: usize,
    num_sequences: usize,
    snr_db: Vec<f64>,
    seed: u64,
    format_version: u32,
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        constellation_id: ds.constellation_id.clone(),
        split: ds.split,
        block_size: ds.block_size,
        num_sequences: ds.sequences.len(),
        snr_db: ds.sequences.iter().map(|s| s.snr_db).collect(),
        seed: ds.seed,
        format_version: DATASET_FORMAT_VERSION,
    };
    let header = serde_json::to_vec(&header)?;
    let mut payload = Vec::with_capacity(ds.num_samples() * 10);
    for s in &ds.sequences {
        if s.symbols.len() != ds.block_size || s.rx.len() != ds.block_size {
            return Err(Error::Shape { expected: ds.block_size, actual: s.symbols.len().min(s.rx.len()) });
        }
        for &sym in &s.symbols {
            payload.extend_from_slice(&sym.to_le_bytes());
        }
        for x in &s.rx {
            payload.extend_from_slice(&x.re.to_le_bytes());
            payload.extend_from_slice(&x.im.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let fail = |message: String| Error::Format { path: path.to_path_buf(), message };
    if bytes.len() < 12 || &bytes[..8] != DATASET_MAGIC {
        return Err(fail("not a dataset file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(fail(format!(
            "truncated header: expected {} bytes, file has {}",
            12 + header_len,
            bytes.len()
        )));
    }
    let header: DatasetHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| fail(format!("invalid header: {e}")))?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(fail(format!(
            "unsupported format version {} (expected {DATASET_FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.snr_db.len() != header.num_sequences {
        return Err(fail("header snr_db length differs from num_sequences".into()));
    }
    let payload_len = header.num_sequences * header.block_size * 10;
    let expected = 12 + header_len + payload_len + 4;
    if bytes.len() != expected {
        return Err(fail(format!("expected {expected} bytes, file has {}", bytes.len())));
    }
    let payload = &bytes[12 + header_len..12 + header_len + payload_len];
    let crc = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != crc {
        return Err(fail("payload checksum mismatch".into()));
    }
    let n = header.block_size;
    let sequences = payload
        .chunks_exact(n * 10)
        .zip(&header.snr_db)
        .map(|(chunk, &snr_db)| {
            let (syms, iq) = chunk.split_at(2 * n);
            Sequence {
                snr_db,
                symbols: syms.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect(),
                rx: iq
                    .chunks_exact(8)
                    .map(|b| {
                        Complex32::new(
                            f32::from_le_bytes(b[..4].try_into().unwrap()),
                            f32::from_le_bytes(b[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(Dataset {
        constellation_id: header.constellation_id,
        split: header.split,
        block_size: n,
        seed: header.seed,
        sequences,
    })
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_dataset(&std::fs::read(path)?, path)
}

/// Reads a dataset and checks its constellation against `catalog`, logging a
/// warning when the id is unknown.
pub fn read_dataset_checked(path: impl AsRef<Path>, catalog: &[Constellation]) -> Result<(Dataset, bool)> {
    let ds = read_dataset(&path)?;
    let known = catalog.iter().any(|c| c.id() == ds.constellation_id);
    if !known {
        log::warn!(
            "{}: constellation `{}` is not in the catalog; supply one that defines it before demapping",
            path.as_ref().display(),
            ds.constellation_id
        );
    }
    Ok((ds, known))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::build_qam;
    use crate::demap::hard_decision;

    fn small_config() -> ChannelConfig {
        ChannelConfig { block_size: 256, sequences_per_constellation: 20, rng_seed: 7, ..Default::default() }
    }

    #[test]
    fn noise_variance_definition() {
        assert!((noise_variance(10.0) - 0.1).abs() < 1e-15);
        assert!((noise_variance(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn split_counts() {
        let c = ChannelConfig::full_scale();
        assert_eq!(c.num_sequences(Split::Train), 8000);
        assert_eq!(c.num_sequences(Split::Val), 1000);
        assert_eq!(c.num_sequences(Split::Test), 1000);
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.snr_db_min = 5.0;
        c.snr_db_max = 4.0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.block_size = 0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.rrc = Some(RrcConfig { rolloff: 0.0, ..Default::default() });
        assert!(c.validate().is_err());
    }

    #[test]
    fn noiseless_recovers_symbols() {
        let q = build_qam(64).unwrap();
        let cfg = ChannelConfig { noiseless: true, ..small_config() };
        let ds = generate_dataset(&q, &cfg, Split::Test).unwrap();
        for (_, sym, x) in ds.samples() {
            let x = Complex64::new(x.re as f64, x.im as f64);
            assert_eq!(hard_decision(x, &q), sym);
        }
    }

    #[test]
    fn snr_in_range_and_shapes() {
        let q = build_qam(16).unwrap();
        let ds = generate_dataset(&q, &small_config(), Split::Train).unwrap();
        assert_eq!(ds.sequences.len(), 16);
        for s in &ds.sequences {
            assert!((-5.0..30.0).contains(&s.snr_db));
            assert_eq!(s.symbols.len(), 256);
            assert_eq!(s.rx.len(), 256);
        }
    }

    #[test]
    fn deterministic_and_split_dependent() {
        let q = build_qam(4).unwrap();
        let a = generate_dataset(&q, &small_config(), Split::Val).unwrap();
        let b = generate_dataset(&q, &small_config(), Split::Val).unwrap();
        let c = generate_dataset(&q, &small_config(), Split::Test).unwrap();
        assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
        assert_ne!(a.sequences[0].rx, c.sequences[0].rx);
    }

    #[test]
    fn rrc_taps_shape() {
        let taps = rrc_taps(0.25, 10, 4);
        assert_eq!(taps.len(), 41);
        for k in 0..taps.len() {
            assert!((taps[k] - taps[taps.len() - 1 - k]).abs() < 1e-15);
        }
        assert!((taps.iter().map(|h| h * h).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(taps.iter().all(|h| h.is_finite()));
    }

    #[test]
    fn rrc_singular_points_are_continuous() {
        for b in [0.25, 0.5, 0.35] {
            let t0 = 1.0 / (4.0 * b);
            let eps = 1e-6;
            let limit = rrc_value(t0, b);
            assert!((limit - rrc_value(t0 + eps, b)).abs() < 1e-5, "beta {b}");
            assert!((limit - rrc_value(t0 - eps, b)).abs() < 1e-5, "beta {b}");
            assert!((rrc_value(0.0, b) - rrc_value(eps, b)).abs() < 1e-5);
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let q = build_qam(16).unwrap();
        let ds = generate_dataset(&q, &small_config(), Split::Test).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(std::fs::read(&path).unwrap(), encode_dataset(&back).unwrap());
    }

    #[test]
    fn truncated_and_corrupt_files() {
        let q = build_qam(4).unwrap();
        let ds = generate_dataset(&q, &small_config(), Split::Test).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        let p = Path::new("x.bin");
        let err = decode_dataset(&bytes[..bytes.len() - 10], p).unwrap_err().to_string();
        assert!(err.contains(&format!("expected {} bytes", bytes.len())), "{err}");
        assert!(err.contains(&format!("file has {}", bytes.len() - 10)), "{err}");

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 0xff;
        assert!(decode_dataset(&bad, p).unwrap_err().to_string().contains("checksum"));

        let needle = b"\"format_version\":1";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut bumped = bytes.clone();
        bumped[at + needle.len() - 1] = b'9';
        let err = decode_dataset(&bumped, p).unwrap_err().to_string();
        assert!(err.contains("format version 9"), "{err}");

        assert!(decode_dataset(b"NOTADATASET!", p).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn unknown_catalog_id_is_flagged() {
        let q = build_qam(4).unwrap();
        let ds = generate_dataset(&q, &small_config(), Split::Test).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&ds, &path).unwrap();
        let (_, known) = read_dataset_checked(&path, &[build_qam(16).unwrap()]).unwrap();
        assert!(!known);
        let (_, known) = read_dataset_checked(&path, &[q]).unwrap();
        assert!(known);
    }
}
