//! Compute curves as CSV with header `resolution,component,param,flops`.

use std::path::Path;

use resotok_core::flops::CurveRow;

use crate::error::{Error, Result};

pub const HEADER: &str = "resolution,component,param,flops";

pub fn to_csv(rows: &[CurveRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(HEADER.split(',')).map_err(|e| Error::Config(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn from_csv(text: &str) -> std::result::Result<Vec<CurveRow>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| e.to_string())?.iter().collect::<Vec<_>>().join(",");
    if header != HEADER {
        return Err(format!("expected header {HEADER:?}, found {header:?}"));
    }
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())
}

pub fn write_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv(&text).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use resotok_core::flops::Component;

    #[test]
    fn rows_round_trip_through_the_header() {
        let rows = vec![
            CurveRow { resolution: "256x256".into(), component: Component::GeneratorForward, param: 64, flops: 12345 },
            CurveRow { resolution: "1024x768".into(), component: Component::Baseline2dAr, param: 16, flops: u64::MAX },
        ];
        let text = to_csv(&rows).unwrap();
        assert!(text.starts_with("resolution,component,param,flops\n256x256,generator_forward,64,12345\n"));
        assert_eq!(from_csv(&text).unwrap(), rows);
        assert!(from_csv("res,component,param,flops\n").is_err());
        assert_eq!(to_csv(&[]).unwrap(), format!("{HEADER}\n"));
    }
}
