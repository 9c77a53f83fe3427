//! Run configuration (TOML) and seed derivation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::decomp::{DecompParams, TvDecompParams};
use crate::error::{Error, Result};
use crate::materials::{bundled, default_bins, EnergyBin, MaterialTable, Spectrum};
use crate::phantom::PhantomSpec;
use crate::recon::SartTvParams;
use crate::segmentation::KernelParams;

pub const BUNDLED: &str = "bundled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tv,
    Coarse,
    Roi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Tv, Method::Coarse, Method::Roi];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tv => "tv",
            Method::Coarse => "coarse",
            Method::Roi => "roi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "tv" => Ok(Method::Tv),
            "coarse" => Ok(Method::Coarse),
            "roi" => Ok(Method::Roi),
            other => Err(Error::Config(format!("unknown method `{other}` (expected tv, coarse or roi)"))),
        }
    }

    /// Parses a comma-separated list such as `tv,coarse,roi`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = s.split(',').filter(|p| !p.trim().is_empty()).map(Method::parse).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("empty method list".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub n_views: usize,
    pub n_detectors: usize,
    pub detector_spacing_cm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            n_views: 360,
            n_detectors: 256,
            detector_spacing_cm: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Thresholds for the RPT sweep; empty disables it.
    pub thresholds: Vec<f64>,
    /// θ values for the kernel sweep (each paired with every σ²); empty disables it.
    pub thetas: Vec<f64>,
    pub sigma2s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Phantom TOML path, or `bundled` for the desk replica.
    pub phantom: String,
    /// Spectrum table path, or `bundled` for the 80 kVp stand-in.
    pub spectrum: String,
    /// Total blank photons per ray; rescales the spectrum when set.
    pub photons_per_ray: Option<f64>,
    /// Basis materials: bundled names or table paths.
    pub materials: Vec<String>,
    /// Energy bins `[lo, hi)` in keV.
    pub bins: Vec<[f64; 2]>,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out: String,
    /// RPT threshold T.
    pub threshold: f64,
    /// Blend of pixel spectra toward the ROI mean before the fine stage.
    pub beta: f64,
    /// Density (g/cm³) above which a pixel contains a material.
    pub presence_eps: f64,
    pub zero_count_floor: f64,
    /// Basis material used to linearize line integrals against beam
    /// hardening before reconstruction; off when unset.
    pub beam_hardening_reference: Option<String>,
    pub geometry: GeometryConfig,
    pub sart: SartTvParams,
    pub kernel: KernelParams,
    pub decomp: DecompParams,
    pub tv: TvDecompParams,
    pub sweep: SweepConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phantom: BUNDLED.into(),
            spectrum: BUNDLED.into(),
            photons_per_ray: Some(5e4),
            materials: bundled::MATERIALS.iter().map(|s| s.to_string()).collect(),
            bins: default_bins().iter().map(|b| [b.lo, b.hi]).collect(),
            seed: 0,
            methods: Method::ALL.to_vec(),
            out: "out".into(),
            threshold: 0.4,
            beta: 0.5,
            presence_eps: 1e-4,
            zero_count_floor: crate::projector::ZERO_COUNT_FLOOR,
            beam_hardening_reference: None,
            geometry: GeometryConfig::default(),
            sart: SartTvParams::default(),
            kernel: KernelParams::default(),
            decomp: DecompParams::default(),
            tv: TvDecompParams::default(),
            sweep: SweepConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Locates `line N, column M` for a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    Error::Config(format!("line {l}, column {c}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.materials.is_empty() {
            return cfg_err("`materials` must name at least one basis material".into());
        }
        if self.bins.len() < 2 {
            return cfg_err("`bins` needs at least two energy bins".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return cfg_err(format!("`threshold` = {} outside [0, 1]", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return cfg_err(format!("`beta` = {} outside [0, 1]", self.beta));
        }
        if !(self.presence_eps >= 0.0) {
            return cfg_err("`presence_eps` must be >= 0".into());
        }
        if !(self.zero_count_floor > 0.0) {
            return cfg_err("`zero_count_floor` must be > 0".into());
        }
        if let Some(n) = self.photons_per_ray {
            if !(n > 0.0 && n.is_finite()) {
                return cfg_err("`photons_per_ray` must be > 0".into());
            }
        }
        if let Some(r) = &self.beam_hardening_reference {
            if !self.materials.contains(r) {
                return cfg_err(format!("`beam_hardening_reference` = `{r}` is not one of the basis materials"));
            }
        }
        if self.methods.is_empty() {
            return cfg_err("`methods` must not be empty".into());
        }
        let g = &self.geometry;
        if g.n_views == 0 || g.n_detectors == 0 || !(g.detector_spacing_cm > 0.0) {
            return cfg_err("geometry needs n_views, n_detectors >= 1 and detector_spacing_cm > 0".into());
        }
        self.sart.validate()?;
        self.kernel.validate()?;
        self.decomp.admm.validate()?;
        if !(self.decomp.lambda_scale >= 0.0) {
            return cfg_err("`decomp.lambda_scale` must be >= 0".into());
        }
        if !(self.tv.tv_weight >= 0.0) || self.tv.max_iter == 0 {
            return cfg_err("`tv.tv_weight` must be >= 0 and `tv.max_iter` >= 1".into());
        }
        for t in &self.sweep.thresholds {
            if !(0.0..=1.0).contains(t) {
                return cfg_err(format!("sweep threshold {t} outside [0, 1]"));
            }
        }
        for t in &self.sweep.thetas {
            if !(0.0..=1.0).contains(t) {
                return cfg_err(format!("sweep theta {t} outside [0, 1]"));
            }
        }
        if self.sweep.thetas.is_empty() != self.sweep.sigma2s.is_empty() {
            return cfg_err("`sweep.thetas` and `sweep.sigma2s` must both be set or both empty".into());
        }
        if self.sweep.sigma2s.iter().any(|s| !(*s > 0.0)) {
            return cfg_err("sweep sigma2 values must be > 0".into());
        }
        self.energy_bins()?;
        for name in [&self.phantom, &self.spectrum] {
            if name != BUNDLED && !self.resolve(name).is_file() {
                return cfg_err(format!("file `{}` does not exist", self.resolve(name).display()));
            }
        }
        for m in &self.materials {
            if !bundled::MATERIALS.contains(&m.as_str()) && !self.resolve(m).is_file() {
                return cfg_err(format!("material `{m}` is neither bundled nor an existing table file"));
            }
        }
        Ok(())
    }

    pub fn energy_bins(&self) -> Result<Vec<EnergyBin>> {
        let bins: Vec<EnergyBin> = self
            .bins
            .iter()
            .map(|[lo, hi]| EnergyBin::new(*lo, *hi).map_err(|e| Error::Config(format!("bins: {e}"))))
            .collect::<Result<_>>()?;
        for w in bins.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(Error::Config(format!("bins {} and {} overlap or are out of order", w[0], w[1])));
            }
        }
        Ok(bins)
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        if self.phantom == BUNDLED {
            Ok(PhantomSpec::desk_replica())
        } else {
            PhantomSpec::load(self.resolve(&self.phantom))
        }
    }

    /// Spectrum rescaled to `photons_per_ray` when set; checked to cover the bins.
    pub fn spectrum(&self) -> Result<Spectrum> {
        let s = if self.spectrum == BUNDLED {
            bundled::spectrum_80kvp()
        } else {
            Spectrum::load(self.resolve(&self.spectrum)).map_err(|e| Error::Config(e.to_string()))?
        };
        let s = match self.photons_per_ray {
            Some(n) => s.scaled(n / s.total())?,
            None => s,
        };
        let (lo, hi) = (s.grid().min(), s.grid().max());
        for b in self.energy_bins()? {
            if b.lo < lo || b.hi > hi {
                return Err(Error::Config(format!("bin {b} lies outside the spectrum range [{lo}, {hi}] keV")));
            }
        }
        Ok(s)
    }

    fn table(&self, name: &str) -> Result<MaterialTable> {
        if bundled::MATERIALS.contains(&name) {
            bundled::table(name)
        } else {
            MaterialTable::load(self.resolve(name))
        }
    }

    /// Basis tables in `materials` order.
    pub fn basis_tables(&self) -> Result<Vec<MaterialTable>> {
        self.materials.iter().map(|m| self.table(m)).collect()
    }

    /// Seed for one stochastic stage: first 8 bytes of SHA-256(label ‖ seed).
    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    /// Hex digest of the serialized configuration, restricted to `keys`.
    pub fn fingerprint(&self, keys: &[&str]) -> String {
        let full = serde_json::to_value(self).expect("config serializes");
        let mut h = Sha256::new();
        for k in keys {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(full.get(*k).map(|v| v.to_string()).unwrap_or_default().as_bytes());
            h.update(b";");
        }
        hex(&h.finalize())
    }
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
