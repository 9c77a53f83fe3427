//! Disk phantoms and their rasterization into per-material density maps.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{EdgeSide, MaterialTable};

/// Square-pixel raster centred on the origin. Pixel `(row, col)` has its
/// centre at `x = (col + 0.5 - width/2)·s`, `y = (height/2 - row - 0.5)·s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixel_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image grid must have at least one pixel"));
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::invalid("pixel size must be > 0"));
        }
        Ok(ImageGrid {
            width,
            height,
            pixel_size,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.pixel_size;
        (
            (col as f64 + 0.5 - self.width as f64 / 2.0) * s,
            (self.height as f64 / 2.0 - row as f64 - 0.5) * s,
        )
    }

    pub fn half_extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pixel_size / 2.0,
            self.height as f64 * self.pixel_size / 2.0,
        )
    }
}

/// One constituent of a disk or of the background, density in mg/cc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub material: String,
    pub density_mg_cc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Insert {
    pub center_cm: [f64; 2],
    pub radius_cm: f64,
    pub composition: Vec<Component>,
}

/// Declarative disk phantom. Later inserts paint over earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_size_cm: f64,
    #[serde(default)]
    pub background: Vec<Component>,
    #[serde(default)]
    pub inserts: Vec<Insert>,
}

const DESK_REPLICA: &str = include_str!("../data/desk_phantom.toml");

impl PhantomSpec {
    pub fn grid(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.width, self.height, self.pixel_size_cm)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// The bundled 256×256 approximation of the five-material digital phantom.
    pub fn desk_replica() -> Self {
        Self::from_toml(DESK_REPLICA).expect("bundled phantom parses")
    }

    /// Same layout resampled onto a `size`×`size` raster covering the same field of view.
    pub fn resized(&self, size: usize) -> Self {
        let fov = self.width.max(self.height) as f64 * self.pixel_size_cm;
        PhantomSpec {
            width: size,
            height: size,
            pixel_size_cm: fov / size as f64,
            ..self.clone()
        }
    }

    /// Materials mentioned anywhere in the phantom, in order of first appearance.
    pub fn materials(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let all = self
            .background
            .iter()
            .chain(self.inserts.iter().flat_map(|d| d.composition.iter()));
        for c in all {
            if !out.contains(&c.material) {
                out.push(c.material.clone());
            }
        }
        out
    }

    pub fn validate(&self, materials: &[String]) -> Result<()> {
        let grid = self.grid()?;
        let (hx, hy) = grid.half_extent();
        let comps = self
            .background
            .iter()
            .chain(self.inserts.iter().flat_map(|d| d.composition.iter()));
        for c in comps {
            if !materials.contains(&c.material) {
                return Err(Error::Config(format!(
                    "material `{}` is not in the declared set {:?}",
                    c.material, materials
                )));
            }
            if !(c.density_mg_cc.is_finite() && c.density_mg_cc >= 0.0) {
                return Err(Error::Config(format!("negative or non-finite density for `{}`", c.material)));
            }
        }
        for (k, d) in self.inserts.iter().enumerate() {
            let [cx, cy] = d.center_cm;
            if !(d.radius_cm > 0.0) {
                return Err(Error::Config(format!("insert {k}: radius must be > 0")));
            }
            if cx - d.radius_cm < -hx || cx + d.radius_cm > hx || cy - d.radius_cm < -hy || cy + d.radius_cm > hy {
                return Err(Error::Config(format!("insert {k} extends outside the image")));
            }
        }
        Ok(())
    }
}

/// Mass density per material per pixel, g/cm³.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMaps {
    maps: Array3<f64>,
    material_names: Vec<String>,
    /// Free-form remarks from rasterization (overlaps and the like).
    pub notes: Vec<String>,
}

impl DensityMaps {
    pub fn new(maps: Array3<f64>, material_names: Vec<String>) -> Result<Self> {
        if maps.dim().0 != material_names.len() {
            return Err(Error::invalid(format!(
                "{} maps for {} material names",
                maps.dim().0,
                material_names.len()
            )));
        }
        if maps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("density maps contain non-finite values"));
        }
        Ok(DensityMaps {
            maps,
            material_names,
            notes: Vec::new(),
        })
    }

    pub fn zeros(material_names: Vec<String>, height: usize, width: usize) -> Self {
        DensityMaps {
            maps: Array3::zeros((material_names.len(), height, width)),
            material_names,
            notes: Vec::new(),
        }
    }

    pub fn maps(&self) -> &Array3<f64> {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut Array3<f64> {
        &mut self.maps
    }

    pub fn into_maps(self) -> Array3<f64> {
        self.maps
    }

    pub fn material_names(&self) -> &[String] {
        &self.material_names
    }

    pub fn n_materials(&self) -> usize {
        self.material_names.len()
    }

    pub fn height(&self) -> usize {
        self.maps.dim().1
    }

    pub fn width(&self) -> usize {
        self.maps.dim().2
    }

    pub fn map(&self, material: usize) -> ArrayView2<'_, f64> {
        self.maps.index_axis(ndarray::Axis(0), material)
    }

    pub fn map_by_name(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        self.material_index(name).map(|k| self.map(k))
    }

    pub fn material_index(&self, name: &str) -> Option<usize> {
        self.material_names.iter().position(|m| m == name)
    }

    /// `a·self + b·other`, for maps over the same materials.
    pub fn combine(&self, a: f64, other: &DensityMaps, b: f64) -> Result<DensityMaps> {
        if self.material_names != other.material_names || self.maps.dim() != other.maps.dim() {
            return Err(Error::invalid("density maps differ in shape or materials"));
        }
        let mut maps = self.maps.clone();
        Zip::from(&mut maps).and(&other.maps).for_each(|x, &y| *x = a * *x + b * y);
        Ok(DensityMaps {
            maps,
            material_names: self.material_names.clone(),
            notes: Vec::new(),
        })
    }
}

/// Paints the phantom onto its raster. A pixel belongs to a disk iff its
/// centre lies inside the circle; later disks win.
pub fn rasterize(spec: &PhantomSpec, materials: &[String]) -> Result<DensityMaps> {
    spec.validate(materials)?;
    let grid = spec.grid()?;
    let index = |name: &str| materials.iter().position(|m| m == name).expect("validated");
    let to_vec = |comps: &[Component]| {
        let mut v = vec![0.0; materials.len()];
        for c in comps {
            v[index(&c.material)] += c.density_mg_cc * 1e-3;
        }
        v
    };
    let background = to_vec(&spec.background);
    let disks: Vec<(f64, f64, f64, Vec<f64>)> = spec
        .inserts
        .iter()
        .map(|d| (d.center_cm[0], d.center_cm[1], d.radius_cm * d.radius_cm, to_vec(&d.composition)))
        .collect();

    let mut maps = Array3::zeros((materials.len(), grid.height, grid.width));
    let mut owner: Array2<Option<usize>> = Array2::from_elem((grid.height, grid.width), None);
    let mut overlaps = std::collections::BTreeSet::new();
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (x, y) = grid.pixel_center(row, col);
            let mut hit = None;
            for (k, (cx, cy, r2, _)) in disks.iter().enumerate() {
                if (x - cx).powi(2) + (y - cy).powi(2) <= *r2 {
                    if let Some(prev) = hit {
                        overlaps.insert((prev, k));
                    }
                    hit = Some(k);
                }
            }
            owner[[row, col]] = hit;
            let values = hit.map_or(&background, |k| &disks[k].3);
            for (m, v) in values.iter().enumerate() {
                maps[[m, row, col]] = *v;
            }
        }
    }
    let mut out = DensityMaps::new(maps, materials.to_vec())?;
    // nested inserts (a disk fully inside a larger earlier one) are the normal
    // way of building a body with inserts; only partial overlaps are remarkable
    for (a, b) in overlaps {
        let (da, db) = (&spec.inserts[a], &spec.inserts[b]);
        let dist = ((da.center_cm[0] - db.center_cm[0]).powi(2) + (da.center_cm[1] - db.center_cm[1]).powi(2)).sqrt();
        if dist + db.radius_cm > da.radius_cm {
            out.notes.push(format!("inserts {a} and {b} overlap; insert {b} wins"));
        }
    }
    Ok(out)
}

/// `μ(x, E) = Σ_α μ_mα(E) ρ_α(x)` in 1/cm.
pub fn attenuation_image(maps: &DensityMaps, tables: &[MaterialTable], energy: f64) -> Result<Array2<f64>> {
    attenuation_image_at(maps, tables, energy, EdgeSide::Right)
}

pub(crate) fn attenuation_image_at(
    maps: &DensityMaps,
    tables: &[MaterialTable],
    energy: f64,
    side: EdgeSide,
) -> Result<Array2<f64>> {
    let coeffs = coefficients_for(maps.material_names(), tables, energy, side)?;
    let mut out = Array2::zeros((maps.height(), maps.width()));
    for (k, c) in coeffs.iter().enumerate() {
        out.scaled_add(*c, &maps.map(k));
    }
    Ok(out)
}

/// `μ_m(E)` of each named material, looked up among `tables`.
pub(crate) fn coefficients_for(names: &[String], tables: &[MaterialTable], energy: f64, side: EdgeSide) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            let t = tables
                .iter()
                .find(|t| t.name() == n)
                .ok_or_else(|| Error::invalid(format!("no attenuation table for `{n}`")))?;
            t.mu_at(energy, side)
        })
        .collect()
}
