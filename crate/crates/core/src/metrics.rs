//! Decomposition quality metrics and method comparison tables.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::phantom::DensityMaps;

/// `‖x − x_gt‖₂ / ‖x_gt‖₂`.
pub fn normalized_euclidean(x: ArrayView2<f64>, x_gt: ArrayView2<f64>) -> Result<f64> {
    if x.dim() != x_gt.dim() {
        return Err(Error::invalid(format!("shape {:?} vs ground truth {:?}", x.dim(), x_gt.dim())));
    }
    let gt = x_gt.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gt == 0.0 {
        return Err(Error::invalid("ground truth has zero norm"));
    }
    let diff = x.iter().zip(x_gt.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(diff / gt)
}

/// Per-material false-positive and false-negative rates over the ground-truth
/// object region (pixels where any material is present).
pub fn fp_fn_rates(x: &DensityMaps, x_gt: &DensityMaps, presence_eps: f64) -> Result<Vec<(f64, f64)>> {
    if x.maps().dim() != x_gt.maps().dim() {
        return Err(Error::invalid("decomposition and ground truth differ in shape"));
    }
    if x.material_names() != x_gt.material_names() {
        return Err(Error::invalid("decomposition and ground truth list different materials"));
    }
    let (m, h, w) = x_gt.maps().dim();
    let gt = x_gt.maps();
    let xs = x.maps();
    let mut region = 0usize;
    let mut fp = vec![0usize; m];
    let mut fn_ = vec![0usize; m];
    for r in 0..h {
        for c in 0..w {
            if !(0..m).any(|a| gt[[a, r, c]] > 0.0) {
                continue;
            }
            region += 1;
            for a in 0..m {
                let truth = gt[[a, r, c]] > 0.0;
                let found = xs[[a, r, c]] > presence_eps;
                if found && !truth {
                    fp[a] += 1;
                }
                if truth && !found {
                    fn_[a] += 1;
                }
            }
        }
    }
    if region == 0 {
        return Err(Error::invalid("ground truth has an empty object region"));
    }
    Ok((0..m).map(|a| (fp[a] as f64 / region as f64, fn_[a] as f64 / region as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialMetrics {
    pub material: String,
    pub error_m: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub materials: Vec<MaterialMetrics>,
    /// Run description (phantom, seed, parameters); must agree across compared reports.
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    /// Metrics for every material with a nonzero ground truth.
    pub fn evaluate(method: &str, x: &DensityMaps, x_gt: &DensityMaps, presence_eps: f64, metadata: BTreeMap<String, String>) -> Result<Self> {
        let rates = fp_fn_rates(x, x_gt, presence_eps)?;
        let mut materials = Vec::new();
        for (a, name) in x_gt.material_names().iter().enumerate() {
            if x_gt.map(a).iter().all(|v| *v == 0.0) {
                continue;
            }
            materials.push(MaterialMetrics {
                material: name.clone(),
                error_m: normalized_euclidean(x.map(a), x_gt.map(a))?,
                fp: rates[a].0,
                fn_: rates[a].1,
            });
        }
        Ok(EvalReport {
            method: method.to_string(),
            materials,
            metadata,
        })
    }

    pub fn get(&self, material: &str) -> Option<&MaterialMetrics> {
        self.materials.iter().find(|m| m.material == material)
    }
}

/// `%#.6g`-style formatting: six significant digits, trailing zeros kept.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let (mant, _) = sci.split_at(sci.find('e').expect("exponent"));
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        format!("{v:.*}", (5 - exp) as usize)
    }
}

pub const CSV_HEADER: &str = "method,material,error_m,fp,fn";

/// CSV rows for a list of reports, in report then material order.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        for m in &r.materials {
            let _ = writeln!(s, "{},{},{},{},{}", r.method, m.material, format_sig6(m.error_m), format_sig6(m.fp), format_sig6(m.fn_));
        }
    }
    s
}

/// Side-by-side table plus CSV for reports of the same run.
pub fn compare_methods(reports: &[EvalReport]) -> Result<(String, String)> {
    let Some(first) = reports.first() else {
        return Err(Error::invalid("no reports to compare"));
    };
    for r in &reports[1..] {
        for key in ["phantom", "seed"] {
            if r.metadata.get(key) != first.metadata.get(key) {
                return Err(Error::invalid(format!(
                    "report '{}' has {key} {:?}, expected {:?}",
                    r.method,
                    r.metadata.get(key),
                    first.metadata.get(key)
                )));
            }
        }
    }
    let mut materials: Vec<&str> = Vec::new();
    for r in reports {
        for m in &r.materials {
            if !materials.contains(&m.material.as_str()) {
                materials.push(&m.material);
            }
        }
    }
    let mut t = String::new();
    for (metric, pick) in [
        ("error_m", (|m: &MaterialMetrics| m.error_m) as fn(&MaterialMetrics) -> f64),
        ("fp", |m| m.fp),
        ("fn", |m| m.fn_),
    ] {
        let _ = write!(t, "{metric:<12}");
        for r in reports {
            let _ = write!(t, " {:>12}", r.method);
        }
        t.push('\n');
        for mat in &materials {
            let _ = write!(t, "{mat:<12}");
            for r in reports {
                match r.get(mat) {
                    Some(m) => {
                        let _ = write!(t, " {:>12}", format_sig6(pick(m)));
                    }
                    None => {
                        let _ = write!(t, " {:>12}", "-");
                    }
                }
            }
            t.push('\n');
        }
        t.push('\n');
    }
    Ok((t, reports_csv(reports)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    fn gt() -> DensityMaps {
        // material a on the left half of a 4x4 object region, b everywhere
        let maps = Array3::from_shape_fn((2, 4, 4), |(m, _, c)| if m == 0 { if c < 2 { 0.01 } else { 0.0 } } else { 1.0 });
        DensityMaps::new(maps, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn error_identities() {
        let g = Array2::from_shape_fn((3, 3), |(r, c)| (r + 2 * c) as f64 + 1.0);
        assert_eq!(normalized_euclidean(g.view(), g.view()).unwrap(), 0.0);
        assert!((normalized_euclidean(Array2::zeros((3, 3)).view(), g.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!((normalized_euclidean((&g * 2.0).view(), g.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(normalized_euclidean(g.view(), Array2::zeros((3, 3)).view()).is_err());
    }

    #[test]
    fn counting_rates() {
        let truth = gt();
        let perfect = fp_fn_rates(&truth, &truth, 1e-4).unwrap();
        assert!(perfect.iter().all(|&(fp, fn_)| fp == 0.0 && fn_ == 0.0));
        let everywhere = DensityMaps::new(Array3::from_elem((2, 4, 4), 0.5), vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(fp_fn_rates(&everywhere, &truth, 1e-4).unwrap()[0], (0.5, 0.0));
        let zero = DensityMaps::zeros(vec!["a".into(), "b".into()], 4, 4);
        assert_eq!(fp_fn_rates(&zero, &truth, 1e-4).unwrap()[0], (0.0, 0.5));
    }

    #[test]
    fn empty_region_is_an_error() {
        let zero = DensityMaps::zeros(vec!["a".into()], 2, 2);
        assert!(fp_fn_rates(&zero, &zero, 1e-4).is_err());
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0.00000");
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(1.0), "1.00000");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(0.00001234567), "1.23457e-05");
        assert_eq!(format_sig6(9.9999996), "10.0000");
        assert_eq!(format_sig6(-0.5), "-0.500000");
    }

    #[test]
    fn csv_and_table() {
        let truth = gt();
        let r = EvalReport::evaluate("roi", &truth, &truth, 1e-4, BTreeMap::new()).unwrap();
        let (table, csv) = compare_methods(&[r.clone(), EvalReport { method: "tv".into(), ..r.clone() }]).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "roi,a,0.00000,0.00000,0.00000");
        assert_eq!(csv.lines().count(), 5);
        assert!(table.contains("roi") && table.contains("tv"));
        let mut other = r.clone();
        other.metadata.insert("seed".into(), "9".into());
        assert!(compare_methods(&[r, other]).is_err());
    }

    proptest! {
        #[test]
        fn error_scales_linearly(c in -3.0f64..3.0) {
            let g = Array2::from_shape_fn((4, 5), |(r, k)| (r * 5 + k) as f64 * 0.1 + 0.05);
            let e = normalized_euclidean((&g * c).view(), g.view()).unwrap();
            prop_assert!((e - (c - 1.0).abs()).abs() < 1e-12);
        }

        #[test]
        fn rates_are_bounded_and_scale_free(s in 1.0f64..100.0, seed in 0u64..50) {
            let truth = gt();
            let maps = Array3::from_shape_fn((2, 4, 4), |(m, r, c)| if (r * 4 + c + m + seed as usize) % 3 == 0 { 0.01 } else { 0.0 });
            let x = DensityMaps::new(maps.clone(), vec!["a".into(), "b".into()]).unwrap();
            let xs = DensityMaps::new(maps * s, vec!["a".into(), "b".into()]).unwrap();
            let a = fp_fn_rates(&x, &truth, 1e-4).unwrap();
            prop_assert_eq!(&a, &fp_fn_rates(&xs, &truth, 1e-4).unwrap());
            for (fp, fn_) in a {
                prop_assert!((0.0..=1.0).contains(&fp) && (0.0..=1.0).contains(&fn_));
            }
        }
    }
}
