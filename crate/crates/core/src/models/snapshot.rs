//! Versioned text snapshot of a trained [`PosteriorEnsemble`].
//!
//! Layout: a magic line `BAE-SNAPSHOT <version>` followed by one JSON document
//! holding the method tag, architecture, seeds and every parameter array.

use std::fs;
use std::path::Path;

use crate::error::{BaeError, Result};

use super::PosteriorEnsemble;

pub const SNAPSHOT_MAGIC: &str = "BAE-SNAPSHOT";
const SNAPSHOT_VERSION: u32 = 1;

pub fn encode_snapshot(ensemble: &PosteriorEnsemble) -> Result<String> {
    let body = serde_json::to_string(ensemble)?;
    Ok(format!("{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}\n{body}\n"))
}

pub fn decode_snapshot(text: &str) -> Result<PosteriorEnsemble> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| BaeError::Format("missing header line".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(SNAPSHOT_MAGIC) {
        return Err(BaeError::Format(format!("bad magic in header {header:?}")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| BaeError::Format(format!("bad version in header {header:?}")))?;
    if version != SNAPSHOT_VERSION {
        return Err(BaeError::Format(format!(
            "snapshot version {version} is not supported (expected {SNAPSHOT_VERSION})"
        )));
    }
    Ok(serde_json::from_str(body)?)
}

pub fn save_snapshot(ensemble: &PosteriorEnsemble, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_snapshot(ensemble)?)?;
    Ok(())
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<PosteriorEnsemble> {
    decode_snapshot(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RealMatrix;
    use crate::models::{train, AutoencoderArchitecture, Method, ModelOptions, TrainingConfig};

    #[test]
    fn roundtrip_preserves_predictions() {
        let x = RealMatrix::from_rows(&[vec![0.1, 0.9], vec![0.4, 0.6], vec![0.8, 0.3]]).unwrap();
        let arch = AutoencoderArchitecture::new(2, vec![3], 1);
        let cfg = TrainingConfig {
            epochs: 2,
            samples: Some(3),
            ..Default::default()
        };
        for method in Method::ALL {
            let ens = train(method, &x, &arch, &cfg, &ModelOptions::default()).unwrap();
            let back = decode_snapshot(&encode_snapshot(&ens).unwrap()).unwrap();
            assert_eq!(back, ens);
            assert_eq!(back.predict(&x).unwrap(), ens.predict(&x).unwrap());
        }
    }

    #[test]
    fn rejects_foreign_headers() {
        assert!(matches!(decode_snapshot("{}"), Err(BaeError::Format(_))));
        assert!(matches!(decode_snapshot("NOPE 1\n{}"), Err(BaeError::Format(_))));
        assert!(matches!(
            decode_snapshot("BAE-SNAPSHOT 99\n{}"),
            Err(BaeError::Format(_))
        ));
    }
}
