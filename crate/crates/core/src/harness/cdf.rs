use std::io::Write;
use std::path::Path;

use crate::dataset::Sample;
use crate::features::{assemble, FeatureSetting};
use crate::{Error, Result};

/// Sorted values paired with the empirical CDF ordinate `k / n`.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(k, x)| (x, (k + 1) as f64 / n)).collect()
}

/// Writes `class,value,cdf` rows, one trace per class in the given order.
pub fn export_cdf(classes: &[(String, Vec<f64>)], mut w: impl Write) -> Result<()> {
    if let Some((name, _)) = classes.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyClass(name.clone()));
    }
    let io = |e| Error::io("<cdf>", e);
    writeln!(w, "class,value,cdf").map_err(io)?;
    for (name, values) in classes {
        for (x, p) in cdf_points(values) {
            writeln!(w, "{name},{x},{p}").map_err(io)?;
        }
    }
    Ok(())
}

pub fn save_cdf(classes: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    export_cdf(classes, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Values of one feature column (e.g. `mean`, `r_variance`) grouped into
/// a `crypto` and a `stock` trace.
pub fn feature_by_class(samples: &[Sample], setting: FeatureSetting, feature: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let col = setting
        .column_names()
        .iter()
        .position(|c| c == feature)
        .ok_or_else(|| Error::InvalidConfig(format!("no feature `{feature}` under setting {setting}")))?;
    let mut crypto = Vec::new();
    let mut stock = Vec::new();
    for s in samples {
        let v = assemble(setting, s)?[col];
        if s.label == 1 {
            crypto.push(v);
        } else {
            stock.push(v);
        }
    }
    Ok(vec![("crypto".into(), crypto), ("stock".into(), stock)])
}
