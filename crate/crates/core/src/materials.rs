//! X-ray attenuation physics: energy grids, source spectra, bin responses,
//! tabulated mass attenuation coefficients and the bin-averaged
//! decomposition matrix.
//!
//! Tables are two-column text files (`energy_keV mu_m_cm2_g`) with `# key: value`
//! header lines. K-edges are stored as two rows at the same energy, the first
//! being the left limit and the second the right limit.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing photon energies in keV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid(Vec<f64>);

impl EnergyGrid {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.len() < 2 {
            return Err(Error::invalid("energy grid needs at least 2 points"));
        }
        if energies.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::invalid("energy grid entries must be finite and > 0"));
        }
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("energy grid must be strictly increasing"));
        }
        Ok(EnergyGrid(energies))
    }

    pub fn energies(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Linear interpolation of `values` (sampled on this grid) at `energy`,
    /// zero outside the grid.
    pub(crate) fn lerp(&self, values: &[f64], energy: f64) -> f64 {
        let e = &self.0;
        if energy < e[0] || energy > e[e.len() - 1] {
            return 0.0;
        }
        let j = e.partition_point(|&x| x <= energy);
        if j == 0 {
            return values[0];
        }
        if j == e.len() {
            return values[e.len() - 1];
        }
        let (e0, e1) = (e[j - 1], e[j]);
        let t = (energy - e0) / (e1 - e0);
        values[j - 1] + t * (values[j] - values[j - 1])
    }
}

/// Photon fluence per keV per ray, sampled on an energy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    grid: EnergyGrid,
    fluence: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: EnergyGrid, fluence: Vec<f64>) -> Result<Self> {
        if fluence.len() != grid.len() {
            return Err(Error::invalid(format!(
                "spectrum has {} fluence values for {} grid points",
                fluence.len(),
                grid.len()
            )));
        }
        if fluence.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::invalid("spectrum fluence must be finite and >= 0"));
        }
        if fluence.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("spectrum has zero total fluence"));
        }
        Ok(Spectrum { grid, fluence })
    }

    /// A spectrum that is zero everywhere. Not a valid source, but useful as
    /// the neutral element when integrating.
    pub fn zero(grid: EnergyGrid) -> Self {
        let n = grid.len();
        Spectrum {
            grid,
            fluence: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn fluence(&self) -> &[f64] {
        &self.fluence
    }

    /// Fluence linearly interpolated at `energy`.
    pub fn at(&self, energy: f64) -> f64 {
        self.grid.lerp(&self.fluence, energy)
    }

    /// Trapezoidal integral over the whole grid.
    pub fn total(&self) -> f64 {
        let e = self.grid.energies();
        e.windows(2)
            .zip(self.fluence.windows(2))
            .map(|(e, f)| 0.5 * (e[1] - e[0]) * (f[0] + f[1]))
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Spectrum::new(
            self.grid.clone(),
            self.fluence.iter().map(|f| f * factor).collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let table = TwoColumn::parse(text, origin)?;
        let grid = EnergyGrid::new(table.x).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Spectrum::new(grid, table.y)
    }
}

/// Half-open energy interval `[lo, hi)` in keV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBin {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyBin {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::invalid(format!("bad energy bin [{lo}, {hi})")));
        }
        Ok(EnergyBin { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl fmt::Display for EnergyBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{} keV", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sensitivity {
    Ideal,
    Tabulated(Array2<f64>),
}

/// Per-bin detector sensitivity `d_i(E)`.
///
/// Bin `i` integrates over `[lo_i, hi_i]`; inside that interval the ideal
/// response is 1 and a tabulated response is interpolated linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResponse {
    grid: EnergyGrid,
    bins: Vec<EnergyBin>,
    sensitivity: Sensitivity,
}

impl DetectorResponse {
    pub fn ideal(grid: EnergyGrid, bins: Vec<EnergyBin>) -> Result<Self> {
        check_bins(&bins)?;
        Ok(DetectorResponse {
            grid,
            bins,
            sensitivity: Sensitivity::Ideal,
        })
    }

    pub fn tabulated(grid: EnergyGrid, bins: Vec<EnergyBin>, sensitivity: Array2<f64>) -> Result<Self> {
        check_bins(&bins)?;
        if sensitivity.dim() != (bins.len(), grid.len()) {
            return Err(Error::invalid(format!(
                "sensitivity matrix is {:?}, expected ({}, {})",
                sensitivity.dim(),
                bins.len(),
                grid.len()
            )));
        }
        if sensitivity.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::invalid("sensitivity entries must lie in [0, 1]"));
        }
        Ok(DetectorResponse {
            grid,
            bins,
            sensitivity: Sensitivity::Tabulated(sensitivity),
        })
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn bins(&self) -> &[EnergyBin] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// `d_i(E)` on the grid, materialized for the ideal response.
    pub fn sensitivity_matrix(&self) -> Array2<f64> {
        match &self.sensitivity {
            Sensitivity::Tabulated(m) => m.clone(),
            Sensitivity::Ideal => Array2::from_shape_fn((self.bins.len(), self.grid.len()), |(i, j)| {
                let e = self.grid.energies()[j];
                let b = self.bins[i];
                if e >= b.lo && e < b.hi {
                    1.0
                } else {
                    0.0
                }
            }),
        }
    }

    fn weight(&self, bin: usize, energy: f64) -> f64 {
        match &self.sensitivity {
            Sensitivity::Ideal => 1.0,
            Sensitivity::Tabulated(m) => {
                let row = m.row(bin);
                self.grid.lerp(row.as_slice().expect("standard layout"), energy)
            }
        }
    }
}

fn check_bins(bins: &[EnergyBin]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::invalid("at least one energy bin is required"));
    }
    for b in bins {
        EnergyBin::new(b.lo, b.hi)?;
    }
    if bins.windows(2).any(|w| w[1].lo < w[0].hi) {
        return Err(Error::invalid("energy bins must be ordered and non-overlapping"));
    }
    Ok(())
}

/// Tabulated mass attenuation coefficients of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialTable {
    name: String,
    energies: Vec<f64>,
    mass_atten: Vec<f64>,
    reference_density: f64,
}

/// Which limit to take when an energy coincides with an absorption edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeSide {
    Left,
    Right,
}

impl MaterialTable {
    /// Builds a table, validating the sampling. Energies must be
    /// non-decreasing with at most two rows sharing an energy (an edge).
    pub fn new(name: impl Into<String>, energies: Vec<f64>, mass_atten: Vec<f64>, reference_density: f64) -> Result<Self> {
        let name = name.into();
        if energies.len() != mass_atten.len() {
            return Err(Error::invalid(format!("{name}: column lengths differ")));
        }
        if energies.len() < 2 {
            return Err(Error::invalid(format!("{name}: table needs at least 2 rows")));
        }
        if energies.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::invalid(format!("{name}: energies must be finite and > 0")));
        }
        if mass_atten.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid(format!("{name}: coefficients must be finite and > 0")));
        }
        for (k, w) in energies.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::invalid(format!("{name}: energies decrease at row {}", k + 2)));
            }
            if w[1] == w[0] && k + 2 < energies.len() && energies[k + 2] == w[1] {
                return Err(Error::invalid(format!("{name}: more than two rows at {} keV", w[0])));
            }
        }
        if energies[0] == energies[1] || energies[energies.len() - 1] == energies[energies.len() - 2] {
            return Err(Error::invalid(format!("{name}: a table cannot start or end on an edge")));
        }
        if !(reference_density.is_finite() && reference_density > 0.0) {
            return Err(Error::invalid(format!("{name}: density must be > 0")));
        }
        Ok(MaterialTable {
            name,
            energies,
            mass_atten,
            reference_density,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn mass_atten(&self) -> &[f64] {
        &self.mass_atten
    }

    pub fn reference_density(&self) -> f64 {
        self.reference_density
    }

    pub fn min_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn max_energy(&self) -> f64 {
        self.energies[self.energies.len() - 1]
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        lo >= self.min_energy() && hi <= self.max_energy()
    }

    /// Energies at which the table jumps.
    pub fn edges(&self) -> Vec<f64> {
        self.energies
            .windows(2)
            .filter(|w| w[0] == w[1])
            .map(|w| w[0])
            .collect()
    }

    /// Log-log interpolated `μ_m(E)`, taking the given limit at an edge.
    pub fn mu_at(&self, energy: f64, side: EdgeSide) -> Result<f64> {
        let e = &self.energies;
        let v = &self.mass_atten;
        if !(energy >= self.min_energy() && energy <= self.max_energy()) {
            return Err(Error::EnergyOutOfRange {
                material: self.name.clone(),
                energy,
                lo: self.min_energy(),
                hi: self.max_energy(),
            });
        }
        // (lower, upper) bracketing rows
        let (a, b) = match side {
            EdgeSide::Right => {
                let j = e.partition_point(|&x| x <= energy) - 1;
                if e[j] == energy {
                    return Ok(v[j]);
                }
                (j, j + 1)
            }
            EdgeSide::Left => {
                let j = e.partition_point(|&x| x < energy);
                if e[j] == energy {
                    return Ok(v[j]);
                }
                (j - 1, j)
            }
        };
        let t = (energy.ln() - e[a].ln()) / (e[b].ln() - e[a].ln());
        Ok((v[a].ln() + t * (v[b].ln() - v[a].ln())).exp())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let table = TwoColumn::parse(text, origin)?;
        let header = |key: &str| table.headers.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let name = header("material").ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            msg: "missing `# material: <name>` header".into(),
        })?;
        let density = header("density_g_cm3")
            .ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                msg: "missing `# density_g_cm3: <v>` header".into(),
            })?
            .parse::<f64>()
            .map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                msg: format!("bad density: {e}"),
            })?;
        MaterialTable::new(name, table.x, table.y, density).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// Reads a material table file.
pub fn load_material_table(path: impl AsRef<Path>) -> Result<MaterialTable> {
    MaterialTable::load(path)
}

/// `μ_m(E)` by log-log interpolation; at an edge energy the right limit is used.
pub fn interpolate_mu(table: &MaterialTable, energy: f64) -> Result<f64> {
    table.mu_at(energy, EdgeSide::Right)
}

struct TwoColumn {
    headers: Vec<(String, String)>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TwoColumn {
    fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut out = TwoColumn {
            headers: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        };
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once(':') {
                    out.headers.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err(i + 1, format!("expected two columns, got `{line}`")));
            };
            let a: f64 = a.parse().map_err(|e| err(i + 1, format!("bad energy `{a}`: {e}")))?;
            let b: f64 = b.parse().map_err(|e| err(i + 1, format!("bad value `{b}`: {e}")))?;
            out.x.push(a);
            out.y.push(b);
        }
        if out.x.len() < 2 {
            return Err(err(0, format!("need at least 2 data rows, found {}", out.x.len())));
        }
        Ok(out)
    }
}

/// Bundled attenuation tables and default spectrum, compiled into the binary.
pub mod bundled {
    use std::path::Path;

    use super::{MaterialTable, Spectrum};
    use crate::error::{Error, Result};

    const WATER: &str = include_str!("../data/water.tsv");
    const PMMA: &str = include_str!("../data/pmma.tsv");
    const IRON: &str = include_str!("../data/iron.tsv");
    const IODINE: &str = include_str!("../data/iodine.tsv");
    const GADOLINIUM: &str = include_str!("../data/gadolinium.tsv");
    const SPECTRUM_80KVP: &str = include_str!("../data/spectrum_80kvp.tsv");

    pub const MATERIALS: [&str; 5] = ["water", "pmma", "iron", "iodine", "gadolinium"];

    pub fn table(name: &str) -> Result<MaterialTable> {
        let text = match name {
            "water" => WATER,
            "pmma" => PMMA,
            "iron" => IRON,
            "iodine" => IODINE,
            "gadolinium" => GADOLINIUM,
            other => return Err(Error::invalid(format!("no bundled table for `{other}`"))),
        };
        MaterialTable::parse(text, Path::new(&format!("<bundled>/{name}.tsv")))
    }

    pub fn tables(names: &[&str]) -> Result<Vec<MaterialTable>> {
        names.iter().map(|n| table(n)).collect()
    }

    /// Kramers-law 80 kVp continuum behind 2.5 mm Al, 1e5 photons per ray.
    pub fn spectrum_80kvp() -> Spectrum {
        Spectrum::parse(SPECTRUM_80KVP, Path::new("<bundled>/spectrum_80kvp.tsv")).expect("bundled spectrum is valid")
    }
}

/// One node of a bin quadrature rule: `∫_bin n0 d_i f dE ≈ Σ weight·f(energy, side)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode {
    pub energy: f64,
    pub side: EdgeSide,
    pub weight: f64,
}

/// Simpson's rule on every segment of the spectrum grid within a bin, with the
/// bin limits and any absorption edges inserted as breakpoints. At an edge the node is
/// split into a left-limit and a right-limit node, each carrying the weight of
/// its own neighbouring segment.
#[derive(Debug, Clone)]
pub struct BinQuadrature {
    bins: Vec<Vec<QuadNode>>,
}

impl BinQuadrature {
    pub fn new(spectrum: &Spectrum, response: &DetectorResponse, edges: &[f64]) -> Result<Self> {
        if spectrum.grid() != response.grid() {
            return Err(Error::invalid("spectrum and detector response must share one energy grid"));
        }
        let grid = spectrum.grid();
        let mut bins = Vec::with_capacity(response.n_bins());
        for (i, bin) in response.bins().iter().enumerate() {
            if bin.lo < grid.min() || bin.hi > grid.max() {
                return Err(Error::invalid(format!(
                    "bin {bin} exceeds spectrum grid [{}, {}] keV",
                    grid.min(),
                    grid.max()
                )));
            }
            let mut points: Vec<f64> = std::iter::once(bin.lo)
                .chain(grid.energies().iter().copied().filter(|&e| e > bin.lo && e < bin.hi))
                .chain(std::iter::once(bin.hi))
                .collect();
            let inner_edges: Vec<f64> = edges.iter().copied().filter(|&e| e > bin.lo && e < bin.hi).collect();
            points.extend(inner_edges.iter().copied());
            points.sort_by(f64::total_cmp);
            points.dedup();

            let f = |e: f64| spectrum.at(e) * response.weight(i, e);
            let integrand: Vec<f64> = points.iter().map(|&e| f(e)).collect();
            let mut nodes = Vec::with_capacity(2 * points.len() + inner_edges.len());
            for k in 0..points.len() {
                let left = if k > 0 { (points[k] - points[k - 1]) / 6.0 * integrand[k] } else { 0.0 };
                let right = if k + 1 < points.len() {
                    (points[k + 1] - points[k]) / 6.0 * integrand[k]
                } else {
                    0.0
                };
                let e = points[k];
                if inner_edges.contains(&e) {
                    nodes.push(QuadNode { energy: e, side: EdgeSide::Left, weight: left });
                    nodes.push(QuadNode { energy: e, side: EdgeSide::Right, weight: right });
                } else {
                    // at the upper bin limit the left limit is the one inside the bin
                    let side = if k + 1 == points.len() { EdgeSide::Left } else { EdgeSide::Right };
                    nodes.push(QuadNode { energy: e, side, weight: left + right });
                }
                if k + 1 < points.len() {
                    let mid = 0.5 * (points[k] + points[k + 1]);
                    nodes.push(QuadNode {
                        energy: mid,
                        side: EdgeSide::Right,
                        weight: 4.0 * (points[k + 1] - points[k]) / 6.0 * f(mid),
                    });
                }
            }
            nodes.retain(|n| n.weight > 0.0);
            bins.push(nodes);
        }
        Ok(BinQuadrature { bins })
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn nodes(&self, bin: usize) -> &[QuadNode] {
        &self.bins[bin]
    }

    pub fn bin_weight(&self, bin: usize) -> f64 {
        self.bins[bin].iter().map(|n| n.weight).sum()
    }
}

/// Collects the absorption edges of all tables, sorted and deduplicated.
pub fn edge_energies(tables: &[MaterialTable]) -> Vec<f64> {
    let mut edges: Vec<f64> = tables.iter().flat_map(|t| t.edges()).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges
}

/// Incident photons per bin, `∫_{E_i} n0(E) d_i(E) dE`.
pub fn bin_fluence(spectrum: &Spectrum, response: &DetectorResponse) -> Result<Vec<f64>> {
    let q = BinQuadrature::new(spectrum, response, &[])?;
    Ok((0..q.n_bins()).map(|i| q.bin_weight(i)).collect())
}

/// B×M matrix of effective (bin-averaged) mass attenuation coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompMatrix {
    entries: Array2<f64>,
    material_names: Vec<String>,
    bins: Vec<EnergyBin>,
}

impl DecompMatrix {
    pub fn new(entries: Array2<f64>, material_names: Vec<String>, bins: Vec<EnergyBin>) -> Result<Self> {
        if entries.nrows() != bins.len() || entries.ncols() != material_names.len() {
            return Err(Error::invalid(format!(
                "decomposition matrix is {:?} for {} bins and {} materials",
                entries.dim(),
                bins.len(),
                material_names.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("decomposition matrix entries must be finite and > 0"));
        }
        Ok(DecompMatrix {
            entries,
            material_names,
            bins,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn material_names(&self) -> &[String] {
        &self.material_names
    }

    pub fn bins(&self) -> &[EnergyBin] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_materials(&self) -> usize {
        self.entries.ncols()
    }

    pub fn material_index(&self, name: &str) -> Option<usize> {
        self.material_names.iter().position(|m| m == name)
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<DecompMatrix> {
        let entries = Array2::from_shape_fn((self.n_bins(), columns.len()), |(i, j)| self.entries[[i, columns[j]]]);
        let names = columns.iter().map(|&c| self.material_names[c].clone()).collect();
        DecompMatrix::new(entries, names, self.bins.clone())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo_keV,bin_hi_keV");
        for m in &self.material_names {
            s.push(',');
            s.push_str(m);
        }
        s.push('\n');
        for (i, b) in self.bins.iter().enumerate() {
            s.push_str(&format!("{},{}", b.lo, b.hi));
            for j in 0..self.n_materials() {
                s.push_str(&format!(",{:.6e}", self.entries[[i, j]]));
            }
            s.push('\n');
        }
        s
    }
}

/// Fluence-weighted average of each table over each bin.
pub fn effective_mu_matrix(spectrum: &Spectrum, response: &DetectorResponse, tables: &[MaterialTable]) -> Result<DecompMatrix> {
    let quad = BinQuadrature::new(spectrum, response, &edge_energies(tables))?;
    for t in tables {
        for b in response.bins() {
            if !t.covers(b.lo, b.hi) {
                return Err(Error::EnergyOutOfRange {
                    material: t.name().to_string(),
                    energy: if b.lo < t.min_energy() { b.lo } else { b.hi },
                    lo: t.min_energy(),
                    hi: t.max_energy(),
                });
            }
        }
    }
    let mut entries = Array2::zeros((response.n_bins(), tables.len()));
    for i in 0..response.n_bins() {
        let total = quad.bin_weight(i);
        if total <= 0.0 {
            return Err(Error::ZeroFluence { bin: i });
        }
        for (a, t) in tables.iter().enumerate() {
            let mut acc = 0.0;
            for n in quad.nodes(i) {
                acc += n.weight * t.mu_at(n.energy, n.side)?;
            }
            entries[[i, a]] = acc / total;
        }
    }
    DecompMatrix::new(
        entries,
        tables.iter().map(|t| t.name().to_string()).collect(),
        response.bins().to_vec(),
    )
}

/// The five 10 keV bins from 30 to 80 keV.
pub fn default_bins() -> Vec<EnergyBin> {
    (0..5)
        .map(|k| EnergyBin {
            lo: 30.0 + 10.0 * k as f64,
            hi: 40.0 + 10.0 * k as f64,
        })
        .collect()
}
