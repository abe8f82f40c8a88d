//! Ingestion of externally computed PDVs.
//!
//! Users running a real classifier upstream can export one row per
//! (viewpoint, domain) with columns `viewpoint,domain[,timestamp],p_0..p_k`
//! (place PDVs) or `...,a_0..a_k` (action PDVs). When several rows map to the
//! same viewpoint and domain, the row with the latest timestamp wins.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pdv::Pdv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdvKind {
    Place,
    Action,
}

impl PdvKind {
    fn prefix(self) -> &'static str {
        match self {
            PdvKind::Place => "p_",
            PdvKind::Action => "a_",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdvTable {
    kind: PdvKind,
    dim: usize,
    entries: BTreeMap<(String, usize), Pdv>,
}

impl PdvTable {
    pub fn kind(&self) -> PdvKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, domain: &str, viewpoint: usize) -> Result<&Pdv> {
        self.entries
            .get(&(domain.to_string(), viewpoint))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "no ingested PDV for viewpoint {viewpoint} in domain `{domain}`"
                ))
            })
    }

    pub fn load_csv(path: impl AsRef<Path>, kind: PdvKind) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact {
                name: "PDV table".into(),
                path: path.to_path_buf(),
            });
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), kind, &path.display().to_string())
    }

    pub fn from_reader<R: std::io::Read>(reader: R, kind: PdvKind, ctx: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(ctx, e))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let vp_col = col("viewpoint").ok_or_else(|| Error::parse(ctx, "missing `viewpoint` column"))?;
        let dom_col = col("domain").ok_or_else(|| Error::parse(ctx, "missing `domain` column"))?;
        let ts_col = col("timestamp");
        let prefix = kind.prefix();
        let mut value_cols = vec![];
        for k in 0.. {
            match col(&format!("{prefix}{k}")) {
                Some(c) => value_cols.push(c),
                None => break,
            }
        }
        if value_cols.is_empty() {
            return Err(Error::parse(ctx, format!("no `{prefix}0..` columns")));
        }
        let dim = value_cols.len();
        let mut best: BTreeMap<(String, usize), (f64, Pdv)> = BTreeMap::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(ctx, e))?;
            let at = |field: &str, e: &dyn std::fmt::Display| {
                Error::parse(ctx, format!("record {} field `{field}`: {e}", line + 1))
            };
            let v: usize = row[vp_col].trim().parse().map_err(|e| at("viewpoint", &e))?;
            let domain = row[dom_col].trim().to_string();
            let ts = match ts_col {
                Some(c) => row[c].trim().parse::<f64>().map_err(|e| at("timestamp", &e))?,
                None => line as f64,
            };
            let values = value_cols
                .iter()
                .map(|&c| row[c].trim().parse::<f64>().map_err(|e| at(&headers[c], &e)))
                .collect::<Result<Vec<_>>>()?;
            let pdv = Pdv::normalize(values).map_err(|e| at(prefix, &e))?;
            let key = (domain, v);
            if best.get(&key).is_some_and(|(prev, _)| *prev > ts) {
                continue;
            }
            best.insert(key, (ts, pdv));
        }
        Ok(PdvTable {
            kind,
            dim,
            entries: best.into_iter().map(|(k, (_, p))| (k, p)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_keeps_latest_timestamp() {
        let text = "viewpoint,domain,timestamp,p_0,p_1\n\
                    0,a,1.0,0.9,0.1\n\
                    0,a,3.0,0.2,0.8\n\
                    0,a,2.0,0.5,0.5\n\
                    1,a,1.0,2,2\n";
        let t = PdvTable::from_reader(text.as_bytes(), PdvKind::Place, "t").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("a", 0).unwrap().as_slice(), &[0.2, 0.8]);
        assert_eq!(t.get("a", 1).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(t.get("b", 0).is_err());
    }

    #[test]
    fn action_columns_and_errors() {
        let text = "viewpoint,domain,a_0,a_1,a_2\n3,x,1,1,2\n";
        let t = PdvTable::from_reader(text.as_bytes(), PdvKind::Action, "t").unwrap();
        assert_eq!(t.get("x", 3).unwrap().as_slice(), &[0.25, 0.25, 0.5]);
        assert!(PdvTable::from_reader(text.as_bytes(), PdvKind::Place, "t").is_err());
        let bad = "viewpoint,domain,p_0\nzz,x,1\n";
        let err = PdvTable::from_reader(bad.as_bytes(), PdvKind::Place, "t").unwrap_err();
        assert!(err.to_string().contains("viewpoint"));
    }
}
