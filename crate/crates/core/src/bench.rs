//! Experiment harness: dataset generation, training runs, paired BER
//! evaluation against the oracle demappers and decision-boundary grids.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::catalog::{bundled_catalog, load_constellation_file, select};
use crate::channel::{generate_dataset, noise_variance, read_dataset_checked, write_dataset, ChannelConfig, Dataset, Split};
use crate::constellation::Constellation;
use crate::demap::{bit_llrs_from_symbols, exact_awgn_llrs, hard_decision};
use crate::error::{Error, Result};
use crate::neural::io::{load_model, save_model, ModelHeader, MODEL_FORMAT_VERSION};
use crate::neural::train::{csv_field, infer_bit_llrs, infer_symbol_logprobs, train, History, TrainConfig};
use crate::neural::MlpModel;
use crate::representation::{build_layout, LayoutMode, RepresentationLayout};

pub const EXPERIMENT_FORMAT_VERSION: u32 = 1;

/// Bins with fewer bits than this are flagged low-confidence.
pub const MIN_CONFIDENT_BITS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryConfig {
    /// Half-width of the square grid.
    pub extent: f64,
    /// Cells per axis.
    pub resolution: usize,
    /// SNR fed to the network while probing.
    pub snr_db: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { extent: 1.6, resolution: 401, snr_db: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub format_version: u32,
    /// Catalog file; the bundled catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Training constellations; the whole catalog when empty.
    pub constellations: Vec<String>,
    /// Evaluated constellations; the training set when empty.
    pub eval_constellations: Vec<String>,
    pub layout_mode: LayoutMode,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub snr_grid_db: Vec<f64>,
    pub output_dir: PathBuf,
    pub run_seeds: Vec<u64>,
    pub boundary: BoundaryConfig,
}

pub fn default_snr_grid() -> Vec<f64> {
    (0..=14).map(|k| -5.0 + 2.5 * k as f64).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format_version: EXPERIMENT_FORMAT_VERSION,
            catalog: None,
            constellations: Vec::new(),
            eval_constellations: Vec::new(),
            layout_mode: LayoutMode::Hierarchical,
            channel: ChannelConfig::default(),
            train: TrainConfig::default(),
            snr_grid_db: default_snr_grid(),
            output_dir: PathBuf::from("out"),
            run_seeds: vec![0, 1, 2],
            boundary: BoundaryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.format_version != EXPERIMENT_FORMAT_VERSION {
            return Err(Error::Domain(format!(
                "unsupported experiment format version {} (expected {EXPERIMENT_FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn load_catalog(&self) -> Result<Vec<Constellation>> {
        match &self.catalog {
            Some(p) => load_constellation_file(p),
            None => Ok(bundled_catalog()),
        }
    }

    pub fn train_ids(&self, catalog: &[Constellation]) -> Vec<String> {
        if self.constellations.is_empty() {
            catalog.iter().map(|c| c.id().to_string()).collect()
        } else {
            self.constellations.clone()
        }
    }

    pub fn eval_ids(&self, catalog: &[Constellation]) -> Vec<String> {
        if self.eval_constellations.is_empty() {
            self.train_ids(catalog)
        } else {
            self.eval_constellations.clone()
        }
    }

    /// Training and evaluation ids, without repeats.
    pub fn all_ids(&self, catalog: &[Constellation]) -> Vec<String> {
        let mut ids = self.train_ids(catalog);
        for id in self.eval_ids(catalog) {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids
    }

    pub fn validate(&self, catalog: &[Constellation]) -> Result<()> {
        self.channel.validate()?;
        self.train.validate()?;
        select(catalog, &self.all_ids(catalog))?;
        if self.snr_grid_db.is_empty() {
            return Err(Error::Domain("SNR evaluation grid is empty".into()));
        }
        for &s in &self.snr_grid_db {
            if !(s >= self.channel.snr_db_min && s <= self.channel.snr_db_max) {
                return Err(Error::Domain(format!(
                    "grid point {s} dB outside the generated range [{}, {}]",
                    self.channel.snr_db_min, self.channel.snr_db_max
                )));
            }
        }
        if self.run_seeds.is_empty() {
            return Err(Error::Domain("at least one run seed is required".into()));
        }
        if self.boundary.resolution < 2 || !(self.boundary.extent > 0.0) {
            return Err(Error::Domain("boundary grid needs resolution ≥ 2 and a positive extent".into()));
        }
        Ok(())
    }

    /// Layout over every training and evaluation constellation.
    pub fn layout(&self, catalog: &[Constellation]) -> Result<RepresentationLayout> {
        build_layout(&select(catalog, &self.all_ids(catalog))?, self.layout_mode)
    }
}

/// Filesystem-safe stem for a constellation id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "+-.".contains(c) { c } else { '_' })
        .collect()
}

pub fn dataset_path(dir: &Path, id: &str, split: Split) -> PathBuf {
    dir.join("data").join(format!("{}.{split}.hdds", file_stem(id)))
}

pub fn model_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("models").join(format!("seed{seed}.hdnn"))
}

pub fn history_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("models").join(format!("seed{seed}.history.csv"))
}

pub fn ber_path(dir: &Path, id: &str, seed: u64) -> PathBuf {
    dir.join("ber").join(format!("{}.seed{seed}.csv", file_stem(id)))
}

pub fn boundary_path(dir: &Path, id: &str, seed: u64) -> PathBuf {
    dir.join("boundaries").join(format!("{}.seed{seed}.csv", file_stem(id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Demapper {
    Neural,
    HardOracle,
    SoftOracle,
}

impl fmt::Display for Demapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Demapper::Neural => "neural",
            Demapper::HardOracle => "hard_oracle",
            Demapper::SoftOracle => "soft_oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerRow {
    pub snr_db: f64,
    pub bits_counted: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub demapper: Demapper,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerCurve {
    pub constellation_id: String,
    pub rows: Vec<BerRow>,
}

impl BerCurve {
    pub fn rows_for(&self, demapper: Demapper) -> impl Iterator<Item = &BerRow> {
        self.rows.iter().filter(move |r| r.demapper == demapper)
    }

    pub fn row(&self, demapper: Demapper, snr_db: f64) -> Option<&BerRow> {
        self.rows_for(demapper).find(|r| r.snr_db == snr_db)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("constellation,demapper,snr_db,bits_counted,bit_errors,ber,low_confidence\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:e},{}",
                csv_field(&self.constellation_id),
                r.demapper,
                r.snr_db,
                r.bits_counted,
                r.bit_errors,
                r.ber,
                r.low_confidence
            )
            .unwrap();
        }
        out
    }
}

/// Grid point whose bin of width `width` contains `snr_db`.
fn bin_of(grid: &[f64], width: f64, snr_db: f64) -> Option<usize> {
    grid.iter().position(|&g| snr_db >= g - width / 2.0 && snr_db < g + width / 2.0)
}

/// Bin width: the smallest spacing of the grid.
pub fn bin_width(grid: &[f64]) -> f64 {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min).min(2.5)
}

/// BER of each demapper on the same test samples, per SNR bin, with bits
/// taken through `mapping`. The neural demapper is skipped without a model.
pub fn evaluate_ber(
    model: Option<(&MlpModel, &RepresentationLayout)>,
    c: &Constellation,
    mapping: &[BitString],
    test: &Dataset,
    grid: &[f64],
) -> Result<BerCurve> {
    if mapping.len() != c.len() {
        return Err(Error::Shape { expected: c.len(), actual: mapping.len() });
    }
    let width = bin_width(grid);
    let demappers: Vec<Demapper> = match model {
        Some(_) => vec![Demapper::Neural, Demapper::HardOracle, Demapper::SoftOracle],
        None => vec![Demapper::HardOracle, Demapper::SoftOracle],
    };
    let mut bits = vec![0u64; grid.len()];
    let mut errors = vec![vec![0u64; grid.len()]; demappers.len()];

    let samples: Vec<(Complex32, f64)> = test.samples().map(|(snr, _, x)| (x, snr)).collect();
    let neural = match model {
        Some((m, layout)) => Some(infer_bit_llrs(m, &samples, layout, c.id(), mapping)?),
        None => None,
    };
    for (i, (snr, sym, x)) in test.samples().enumerate() {
        if sym >= c.len() {
            return Err(Error::UnknownSymbol { id: c.id().to_string(), symbol: sym, size: c.len() });
        }
        let Some(b) = bin_of(grid, width, snr) else { continue };
        let truth = &mapping[sym];
        bits[b] += truth.len() as u64;
        let x64 = Complex64::new(x.re as f64, x.im as f64);
        for (d, demapper) in demappers.iter().enumerate() {
            let decided = match demapper {
                Demapper::Neural => neural.as_ref().unwrap()[i].hard_bits(),
                Demapper::HardOracle => mapping[hard_decision(x64, c)].clone(),
                Demapper::SoftOracle => {
                    let (slp, _) = exact_awgn_llrs(x64, c, noise_variance(snr))?;
                    bit_llrs_from_symbols(&slp, mapping)?.hard_bits()
                }
            };
            errors[d][b] += decided.hamming(truth) as u64;
        }
    }

    let mut rows = Vec::new();
    for (d, &demapper) in demappers.iter().enumerate() {
        for (b, &g) in grid.iter().enumerate() {
            if bits[b] == 0 {
                continue;
            }
            rows.push(BerRow {
                snr_db: g,
                bits_counted: bits[b],
                bit_errors: errors[d][b],
                ber: errors[d][b] as f64 / bits[b] as f64,
                demapper,
                low_confidence: bits[b] < MIN_CONFIDENT_BITS,
            });
        }
    }
    Ok(BerCurve { constellation_id: c.id().to_string(), rows })
}

/// Neural argmax and oracle hard decision over a square grid of cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    pub constellation_id: String,
    pub extent: f64,
    pub resolution: usize,
    pub snr_db: f64,
    /// Row-major, rows ascending in Q, columns ascending in I.
    pub neural: Vec<usize>,
    pub oracle: Vec<usize>,
}

impl BoundaryGrid {
    pub fn cell_center(extent: f64, resolution: usize, k: usize) -> f64 {
        -extent + (k as f64 + 0.5) * 2.0 * extent / resolution as f64
    }

    pub fn compute(
        model: &MlpModel,
        layout: &RepresentationLayout,
        c: &Constellation,
        config: &BoundaryConfig,
    ) -> Result<Self> {
        let n = config.resolution;
        if n < 2 {
            return Err(Error::Domain(format!("grid resolution {n} below 2")));
        }
        let mut samples = Vec::with_capacity(n * n);
        let mut oracle = Vec::with_capacity(n * n);
        for r in 0..n {
            let q = Self::cell_center(config.extent, n, r);
            for col in 0..n {
                let i = Self::cell_center(config.extent, n, col);
                samples.push((Complex32::new(i as f32, q as f32), config.snr_db));
                oracle.push(hard_decision(Complex64::new(i, q), c));
            }
        }
        let neural = infer_symbol_logprobs(model, &samples, layout, c.id())?
            .iter()
            .map(|p| p.argmax())
            .collect();
        Ok(BoundaryGrid {
            constellation_id: c.id().to_string(),
            extent: config.extent,
            resolution: n,
            snr_db: config.snr_db,
            neural,
            oracle,
        })
    }

    pub fn agreement(&self) -> f64 {
        let same = self.neural.iter().zip(&self.oracle).filter(|(a, b)| a == b).count();
        same as f64 / self.oracle.len() as f64
    }

    /// Cells whose oracle label differs from a 4-neighbour.
    pub fn oracle_boundary(&self) -> Vec<bool> {
        let n = self.resolution;
        let mut edge = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                let k = r * n + c;
                if c + 1 < n && self.oracle[k] != self.oracle[k + 1] {
                    edge[k] = true;
                    edge[k + 1] = true;
                }
                if r + 1 < n && self.oracle[k] != self.oracle[k + n] {
                    edge[k] = true;
                    edge[k + n] = true;
                }
            }
        }
        edge
    }

    /// Disagreeing cells farther than `radius` cells (Chebyshev) from every
    /// oracle boundary cell.
    pub fn far_disagreements(&self, radius: usize) -> usize {
        let n = self.resolution;
        let edge = self.oracle_boundary();
        let mut far = 0;
        for r in 0..n {
            for c in 0..n {
                let k = r * n + c;
                if self.neural[k] == self.oracle[k] {
                    continue;
                }
                let near = (r.saturating_sub(radius)..=(r + radius).min(n - 1))
                    .any(|rr| (c.saturating_sub(radius)..=(c + radius).min(n - 1)).any(|cc| edge[rr * n + cc]));
                if !near {
                    far += 1;
                }
            }
        }
        far
    }

    pub fn to_csv(&self) -> String {
        let n = self.resolution;
        let mut out = String::from("i,q,neural_symbol,oracle_symbol\n");
        for r in 0..n {
            let q = Self::cell_center(self.extent, n, r);
            for c in 0..n {
                let i = Self::cell_center(self.extent, n, c);
                let k = r * n + c;
                writeln!(out, "{i},{q},{},{}", self.neural[k], self.oracle[k]).unwrap();
            }
        }
        writeln!(out, "# agreement,{}", self.agreement()).unwrap();
        out
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

/// Generates and writes train/val/test datasets for every constellation.
pub fn run_gen(cfg: &ExperimentConfig, catalog: &[Constellation]) -> Result<Vec<PathBuf>> {
    cfg.validate(catalog)?;
    let mut written = Vec::new();
    for c in select(catalog, &cfg.all_ids(catalog))? {
        for split in Split::ALL {
            let path = dataset_path(&cfg.output_dir, c.id(), split);
            ensure_parent(&path)?;
            write_dataset(&generate_dataset(c, &cfg.channel, split)?, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_split(cfg: &ExperimentConfig, catalog: &[Constellation], id: &str, split: Split) -> Result<Dataset> {
    let path = dataset_path(&cfg.output_dir, id, split);
    if !path.exists() {
        return Err(Error::Domain(format!("missing dataset {} (run `gen` first)", path.display())));
    }
    let (ds, _) = read_dataset_checked(&path, catalog)?;
    if ds.constellation_id != id {
        return Err(Error::Format {
            path,
            message: format!("holds `{}`, expected `{id}`", ds.constellation_id),
        });
    }
    Ok(ds)
}

/// Trains one model per run seed and writes models and histories.
pub fn run_train(cfg: &ExperimentConfig, catalog: &[Constellation]) -> Result<Vec<(u64, History)>> {
    cfg.validate(catalog)?;
    let layout = cfg.layout(catalog)?;
    let mut datasets = Vec::new();
    for id in cfg.train_ids(catalog) {
        datasets.push((
            read_split(cfg, catalog, &id, Split::Train)?,
            read_split(cfg, catalog, &id, Split::Val)?,
        ));
    }
    let mut out = Vec::new();
    for &seed in &cfg.run_seeds {
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let (model, history) = train(&datasets, &layout, &tc)?;
        let header = ModelHeader {
            layer_sizes: model.sizes(),
            features: model.features,
            layout_hash: layout.hash(),
            seed,
            train_config_digest: tc.digest(),
            format_version: MODEL_FORMAT_VERSION,
        };
        let path = model_path(&cfg.output_dir, seed);
        ensure_parent(&path)?;
        save_model(&model, &header, &path)?;
        fs::write(history_path(&cfg.output_dir, seed), history.to_csv())?;
        out.push((seed, history));
    }
    Ok(out)
}

pub fn load_run_model(cfg: &ExperimentConfig, layout: &RepresentationLayout, seed: u64) -> Result<MlpModel> {
    let path = model_path(&cfg.output_dir, seed);
    if !path.exists() {
        return Err(Error::Domain(format!("missing model {} (run `train` first)", path.display())));
    }
    Ok(load_model(&path, &layout.hash())?.0)
}

/// Writes a BER curve per run seed and evaluated constellation.
pub fn run_eval(cfg: &ExperimentConfig, catalog: &[Constellation]) -> Result<Vec<(u64, BerCurve)>> {
    cfg.validate(catalog)?;
    let layout = cfg.layout(catalog)?;
    let mut out = Vec::new();
    for &seed in &cfg.run_seeds {
        let model = load_run_model(cfg, &layout, seed)?;
        for c in select(catalog, &cfg.eval_ids(catalog))? {
            let test = read_split(cfg, catalog, c.id(), Split::Test)?;
            let curve = evaluate_ber(Some((&model, &layout)), c, c.bit_mapping(), &test, &cfg.snr_grid_db)?;
            let path = ber_path(&cfg.output_dir, c.id(), seed);
            ensure_parent(&path)?;
            fs::write(&path, curve.to_csv())?;
            out.push((seed, curve));
        }
    }
    Ok(out)
}

/// Writes the decision-boundary grid of `id` under the model of `seed`.
pub fn run_boundaries(cfg: &ExperimentConfig, catalog: &[Constellation], id: &str, seed: u64) -> Result<BoundaryGrid> {
    cfg.validate(catalog)?;
    let layout = cfg.layout(catalog)?;
    let model = load_run_model(cfg, &layout, seed)?;
    let c = select(catalog, &[id])?[0];
    let grid = BoundaryGrid::compute(&model, &layout, c, &cfg.boundary)?;
    let path = boundary_path(&cfg.output_dir, id, seed);
    ensure_parent(&path)?;
    fs::write(&path, grid.to_csv())?;
    Ok(grid)
}
