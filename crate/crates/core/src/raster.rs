//! SCTR1 raster container.
//!
//! Layout (little-endian): magic `SCTR1`, `u32` width, height, channels, `u8`
//! dtype tag (1 = f32, 2 = f64, 3 = i32), `u32` length + UTF-8 kind string,
//! `u32` length + UTF-8 JSON metadata, then the payload in channel-major,
//! row-major order (`[c][y][x]`).

use ndarray::{Array2, Array3};
use serde_json::{json, Map, Value};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::materials::EnergyBin;
use crate::phantom::DensityMaps;
use crate::projector::{Geometry, Sinogram, SinogramKind};
use crate::recon::MultiEnergyImage;
use crate::segmentation::LabelImage;

pub const MAGIC: &[u8; 5] = b"SCTR1";

pub const KIND_IMAGE: &str = "multi_energy_image";
pub const KIND_DENSITY: &str = "density_maps";
pub const KIND_ROI: &str = "roi_labels";

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl RasterData {
    fn tag(&self) -> u8 {
        match self {
            RasterData::F32(_) => 1,
            RasterData::F64(_) => 2,
            RasterData::I32(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RasterData::F32(v) => v.len(),
            RasterData::F64(v) => v.len(),
            RasterData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            RasterData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            RasterData::F64(v) => v.clone(),
            RasterData::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub kind: String,
    pub metadata: Map<String, Value>,
    pub data: RasterData,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated raster while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, kind: impl Into<String>, metadata: Map<String, Value>, data: RasterData) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "payload has {} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            kind: kind.into(),
            metadata,
            data,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_string(&self.metadata).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + meta.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.width, "width")?;
        put_u32(&mut out, self.height, "height")?;
        put_u32(&mut out, self.channels, "channels")?;
        out.push(self.data.tag());
        put_u32(&mut out, self.kind.len(), "kind length")?;
        out.extend_from_slice(self.kind.as_bytes());
        put_u32(&mut out, meta.len(), "metadata length")?;
        out.extend_from_slice(meta.as_bytes());
        match &self.data {
            RasterData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RasterData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RasterData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(5, "magic")? != MAGIC {
            return Err(Error::Format("not an SCTR1 raster (bad magic)".into()));
        }
        let width = c.u32("width")?;
        let height = c.u32("height")?;
        let channels = c.u32("channels")?;
        let tag = c.take(1, "dtype")?[0];
        let kind = c.string("kind")?;
        let meta_text = c.string("metadata")?;
        let metadata: Map<String, Value> = serde_json::from_str(&meta_text).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Format("raster dimensions overflow".into()))?;
        let size = match tag {
            1 | 3 => 4,
            2 => 8,
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        let payload = c.take(n * size, "payload")?;
        if c.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - c.pos)));
        }
        let data = match tag {
            1 => RasterData::F32(payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4"))).collect()),
            2 => RasterData::F64(payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8"))).collect()),
            _ => RasterData::I32(payload.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().expect("4"))).collect()),
        };
        Raster::new(width, height, channels, kind, metadata, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path.as_ref())?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
        Raster::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.as_ref().display())),
            other => other,
        })
    }

    fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| Error::Format(format!("{} raster lacks metadata '{key}'", self.kind)))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("metadata '{key}': {e}")))
    }

    fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if !kinds.contains(&self.kind.as_str()) {
            return Err(Error::Format(format!("expected a {} raster, found '{}'", kinds.join(" or "), self.kind)));
        }
        Ok(())
    }

    fn array3(&self) -> Array3<f64> {
        Array3::from_shape_vec((self.channels, self.height, self.width), self.data.to_f64()).expect("length checked")
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("metadata is built from an object literal"),
    }
}

pub fn sinogram_to_raster(s: &Sinogram) -> Result<Raster> {
    let (b, v, d) = s.data.dim();
    let meta = object(json!({ "geometry": s.geometry, "bins": s.bins }));
    Raster::new(d, v, b, s.kind.as_str(), meta, RasterData::F64(s.data.iter().cloned().collect()))
}

pub fn raster_to_sinogram(r: &Raster) -> Result<Sinogram> {
    r.expect_kind(&[SinogramKind::Counts.as_str(), SinogramKind::LineIntegral.as_str()])?;
    let geometry: Geometry = r.meta("geometry")?;
    let bins: Vec<EnergyBin> = r.meta("bins")?;
    Sinogram::new(r.array3(), SinogramKind::parse(&r.kind)?, geometry, bins)
}

pub fn image_to_raster(y: &MultiEnergyImage) -> Result<Raster> {
    let meta = object(json!({ "bins": y.bins, "pixel_size_cm": y.pixel_size, "units": "1/cm" }));
    Raster::new(y.width(), y.height(), y.n_bins(), KIND_IMAGE, meta, RasterData::F64(y.data.iter().cloned().collect()))
}

pub fn raster_to_image(r: &Raster) -> Result<MultiEnergyImage> {
    r.expect_kind(&[KIND_IMAGE])?;
    MultiEnergyImage::new(r.array3(), r.meta("bins")?, r.meta("pixel_size_cm")?)
}

/// Density maps in g/cm³; `extra` entries are merged into the metadata.
pub fn density_to_raster(x: &DensityMaps, extra: Map<String, Value>) -> Result<Raster> {
    let mut meta = object(json!({ "materials": x.material_names(), "units": "g/cm3" }));
    meta.extend(extra);
    Raster::new(x.width(), x.height(), x.n_materials(), KIND_DENSITY, meta, RasterData::F64(x.maps().iter().cloned().collect()))
}

pub fn raster_to_density(r: &Raster) -> Result<DensityMaps> {
    r.expect_kind(&[KIND_DENSITY])?;
    DensityMaps::new(r.array3(), r.meta("materials")?)
}

pub fn labels_to_raster(rois: &LabelImage, extra: Map<String, Value>) -> Result<Raster> {
    let mut meta = object(json!({ "k": rois.k, "means": rois.means, "dropped": rois.dropped }));
    meta.extend(extra);
    let data = rois.labels.iter().map(|&l| l as i32).collect();
    Raster::new(rois.width, rois.height, 1, KIND_ROI, meta, RasterData::I32(data))
}

pub fn raster_to_labels(r: &Raster) -> Result<LabelImage> {
    r.expect_kind(&[KIND_ROI])?;
    let RasterData::I32(v) = &r.data else {
        return Err(Error::Format("ROI raster must hold i32 labels".into()));
    };
    let k: usize = r.meta("k")?;
    let labels: Vec<usize> = v
        .iter()
        .map(|&l| usize::try_from(l).ok().filter(|&l| l < k).ok_or_else(|| Error::Format(format!("label {l} outside [0, {k})"))))
        .collect::<Result<_>>()?;
    let means: Array2<f64> = r.meta("means")?;
    Ok(LabelImage {
        labels,
        width: r.width,
        height: r.height,
        k,
        means,
        dropped: r.meta("dropped")?,
    })
}
