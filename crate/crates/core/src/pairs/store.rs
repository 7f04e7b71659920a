//! On-disk pair sets: a `manifest` text file plus `<id>_father.png` and
//! `<id>_son.png` per pair, each recorded with its SHA-256.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{derive_son, DenoiseOrder, PairSetSpec, PseudoPair};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use crate::resample::ScaleFactor;

pub const MANIFEST: &str = "manifest";
const MAGIC: &str = "simusr-pairs 1";

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub spec: PairSetSpec,
    pub pairs: Vec<PseudoPair>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_png(img: &Image, path: &Path) -> Result<String> {
    save_image(img, path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes the set into `dir` (created if needed) and returns the manifest
/// text.
pub fn save_pairs(set: &PairSet, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &set.spec;
    let mut manifest = format!(
        "{MAGIC}\nscale={}\nkernel={}\nantialias={}\ndenoise={}\ndenoise_order={}\nseed={}\nmin_patch={}\ncount={}\n",
        s.scale,
        s.kernel,
        s.antialias,
        s.denoise,
        s.denoise_order,
        s.seed,
        s.min_patch,
        set.pairs.len()
    );
    for p in &set.pairs {
        let father = format!("{}_father.png", p.source_id);
        let son = format!("{}_son.png", p.source_id);
        let fh = write_png(&p.father, &dir.join(&father))?;
        let sh = write_png(&p.son, &dir.join(&son))?;
        let sigma = p.sigma.map_or("-".to_string(), |v| format!("{v:e}"));
        manifest.push_str(&format!("pair {} {father} {fh} {son} {sh} {sigma}\n", p.source_id));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, &manifest).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, hash: &str) -> Result<Image> {
    if name.contains('/') || name.contains('\\') || name.starts_with('.') {
        return Err(Error::corrupt(dir.join(MANIFEST), format!("bad file name {name:?}")));
    }
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != hash {
        return Err(Error::corrupt(&path, "content hash does not match the manifest"));
    }
    load_image(&path)
}

/// Loads a pair set, checking every file against its recorded hash.
pub fn load_pairs(dir: &Path) -> Result<PairSet> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_owned()));
    }
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bad = |reason: String| Error::corrupt(&mpath, reason);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a pair-set manifest".into()));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_owned)
            .ok_or_else(|| bad(format!("expected {key}=..., found {line:?}")))
    };
    let wrap = |key: &str, e: Error| bad(format!("{key}: {e}"));
    let scale = field("scale")?
        .parse::<f64>()
        .map_err(|e| bad(format!("scale: {e}")))
        .and_then(|v| ScaleFactor::new(v).map_err(|e| wrap("scale", e)))?;
    let kernel = field("kernel")?.parse().map_err(|e| wrap("kernel", e))?;
    let antialias = field("antialias")?.parse().map_err(|e| bad(format!("antialias: {e}")))?;
    let denoise = field("denoise")?.parse().map_err(|e| wrap("denoise", e))?;
    let denoise_order = field("denoise_order")?.parse().map_err(|e| wrap("denoise_order", e))?;
    let seed = field("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?;
    let min_patch = field("min_patch")?.parse().map_err(|e| bad(format!("min_patch: {e}")))?;
    let count: usize = field("count")?.parse().map_err(|e| bad(format!("count: {e}")))?;
    let spec = PairSetSpec {
        scale,
        kernel,
        antialias,
        denoise,
        denoise_order,
        seed,
        min_patch,
    };

    let rows: Vec<&str> = lines.collect();
    if rows.len() != count {
        return Err(bad(format!("manifest lists {} pairs, header says {count}", rows.len())));
    }
    let pairs = rows
        .iter()
        .map(|row| {
            let f: Vec<&str> = row.split(' ').collect();
            if f.len() != 7 || f[0] != "pair" {
                return Err(bad(format!("malformed pair line {row:?}")));
            }
            let father = read_checked(dir, f[2], f[3])?;
            let son = read_checked(dir, f[4], f[5])?;
            let sigma = match f[6] {
                "-" => None,
                v => Some(v.parse().map_err(|_| bad(format!("bad sigma {v:?}")))?),
            };
            Ok(PseudoPair {
                source_id: f[1].to_string(),
                father,
                son,
                scale,
                sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairSet { spec, pairs })
}

/// Recomputes every son from its father; returns the ids that differ.
/// Only sets whose sons were derived from the stored fathers qualify.
pub fn verify_rederivable(set: &PairSet) -> Result<Vec<String>> {
    if set.spec.denoise_order == DenoiseOrder::SonAfter {
        return Err(Error::InvalidArgument(
            "sons denoised separately cannot be re-derived from their fathers".into(),
        ));
    }
    let mut mismatched = Vec::new();
    for p in &set.pairs {
        if derive_son(&p.father, &set.spec)? != p.son {
            mismatched.push(p.source_id.clone());
        }
    }
    Ok(mismatched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::DenoiseSetting;
    use crate::pairs::build_pairs;
    use crate::resample::Kernel;
    use crate::synth;

    fn set(spec: PairSetSpec) -> PairSet {
        let inputs: Vec<(String, Image)> = (0..3)
            .map(|i| (format!("p{i}"), synth::scene(40, 36, i).quantized()))
            .collect();
        PairSet {
            pairs: build_pairs(&spec, &inputs).unwrap(),
            spec,
        }
    }

    #[test]
    fn round_trip_and_rederive() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            PairSetSpec::default(),
            PairSetSpec {
                scale: ScaleFactor::X3,
                kernel: Kernel::Gaussian { sigma: 1.2 },
                denoise: DenoiseSetting::Sigma(0.02),
                seed: 11,
                ..PairSetSpec::default()
            },
        ] {
            let s = set(spec);
            let m1 = save_pairs(&s, dir.path()).unwrap();
            let loaded = load_pairs(dir.path()).unwrap();
            assert_eq!(loaded, s);
            assert!(verify_rederivable(&loaded).unwrap().is_empty());
            assert_eq!(save_pairs(&s, dir.path()).unwrap(), m1);
        }
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let s = set(PairSetSpec::default());
        save_pairs(&s, dir.path()).unwrap();
        let son = dir.path().join("p1_son.png");
        let mut bytes = fs::read(&son).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        fs::write(&son, bytes).unwrap();
        assert!(matches!(load_pairs(dir.path()), Err(Error::Corrupt { .. })));

        let mut other = s.clone();
        other.pairs[1].son = other.pairs[1].son.map(|v| 1.0 - v).unwrap();
        assert_eq!(verify_rederivable(&other).unwrap(), vec!["p1".to_string()]);

        assert!(matches!(load_pairs(&dir.path().join("nope")), Err(Error::NotFound(_))));
        fs::write(dir.path().join(MANIFEST), "garbage").unwrap();
        assert!(matches!(load_pairs(dir.path()), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn son_after_sets_are_not_rederivable() {
        let s = set(PairSetSpec {
            denoise: DenoiseSetting::Sigma(0.02),
            denoise_order: DenoiseOrder::SonAfter,
            ..PairSetSpec::default()
        });
        assert!(verify_rederivable(&s).is_err());
    }
}
