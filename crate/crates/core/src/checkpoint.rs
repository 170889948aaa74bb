//! Binary dump of a trained model for post-hoc analysis.
//!
//! Layout (little-endian): magic `FGMR`, `u32` version, `u32` shape length,
//! the model shape as JSON, `u64` parameter count, the parameters as `f64`,
//! then the same number of importance scores as `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::pruning::ImportanceVector;

const MAGIC: &[u8; 4] = b"FGMR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub importance: ImportanceVector,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, params: ParamVector, importance: ImportanceVector) -> Result<Self> {
        params.check_len(spec.n_params(), "checkpoint params")?;
        if importance.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} importance scores for {} parameters",
                importance.len(),
                params.len()
            )));
        }
        Ok(Checkpoint {
            spec,
            params,
            importance,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = serde_json::to_vec(&self.spec).expect("model shape serializes");
        let n = self.params.len();
        let mut out = Vec::with_capacity(20 + shape.len() + 16 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        out.extend_from_slice(&shape);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for v in self.params.iter().chain(self.importance.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let shape_len = u32::from_le_bytes(r.array()?) as usize;
        let spec: ModelSpec =
            serde_json::from_slice(r.take(shape_len)?).map_err(|e| Error::Format(format!("model shape: {e}")))?;
        let n = u64::from_le_bytes(r.array()?) as usize;
        let mut floats =
            |count: usize| -> Result<Vec<f64>> { (0..count).map(|_| r.array().map(f64::from_le_bytes)).collect() };
        let params = ParamVector::new(floats(n)?);
        let importance = ImportanceVector::new(floats(n)?)?;
        if r.at != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Checkpoint::new(spec, params, importance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        self.at += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::magnitude_importance;
    use crate::rng::seeded;

    #[test]
    fn round_trip() {
        let spec = ModelSpec::mlp(4, vec![3], 2).unwrap();
        let params = spec.init_params(1.0, &mut seeded(2));
        let ck = Checkpoint::new(spec, params.clone(), magnitude_importance(&params)).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let params = ParamVector::zeros(spec.n_params());
        let bytes = Checkpoint::new(spec, params.clone(), magnitude_importance(&params))
            .unwrap()
            .to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }
}
