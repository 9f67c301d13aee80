//! Content-addressed, write-once embedding cache:
//! `<root>/<provider_id>/<sha256>.tensor`, each file a `[3, d]` tensor with
//! rows in view order b, f, r.
//!
//! Writes for one key are serialized in-process and land through an atomic
//! rename, so concurrent readers see either no file or a complete one.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::decomposition::image::Image;
use crate::decomposition::providers::sanitize;
use crate::decomposition::EmbeddingTriplet;
use crate::error::{Error, Result};
use crate::tensor_file::{read_tensor, Tensor};

#[derive(Debug)]
pub struct EmbeddingCache {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `sha256(provider_id, tau, canonical image bytes)` as hex.
    pub fn key(provider_id: &str, tau: f32, raw: &Image<f32>) -> String {
        let mut h = Sha256::new();
        h.update(b"hvdecode-embedding-cache-v1\0");
        h.update(provider_id.as_bytes());
        h.update([0u8]);
        h.update(tau.to_le_bytes());
        h.update(raw.canonical_bytes());
        hex::encode(h.finalize())
    }

    pub fn path(&self, provider_id: &str, key: &str) -> PathBuf {
        self.root.join(sanitize(provider_id)).join(format!("{key}.tensor"))
    }

    /// `Ok(None)` on a miss. An unreadable or malformed entry is logged and
    /// treated as a miss so the caller recomputes and overwrites it.
    pub fn lookup(&self, provider_id: &str, key: &str, dim: usize) -> Result<Option<EmbeddingTriplet>> {
        let path = self.path(provider_id, key);
        if !path.exists() {
            return Ok(None);
        }
        let parsed = read_tensor(&path).and_then(|t| {
            if t.shape != [3, dim] {
                return Err(Error::HeaderMismatch {
                    path: path.clone(),
                    detail: format!("cached shape {:?}, expected [3, {dim}]", t.shape),
                });
            }
            let trip = EmbeddingTriplet {
                contour: t.data[..dim].to_vec(),
                object: t.data[dim..2 * dim].to_vec(),
                context: t.data[2 * dim..].to_vec(),
            };
            trip.validate(dim)?;
            Ok(trip)
        });
        match parsed {
            Ok(t) => Ok(Some(t)),
            Err(e) => {
                log::warn!("corrupted cache entry {}: {e}; recomputing", path.display());
                Ok(None)
            }
        }
    }

    pub fn store(&self, provider_id: &str, key: &str, triplet: &EmbeddingTriplet) -> Result<()> {
        let lock = {
            let mut map = self.locks.lock().expect("cache lock map poisoned");
            map.entry(key.to_string()).or_default().clone()
        };
        let _guard = lock.lock().expect("cache key lock poisoned");

        let path = self.path(provider_id, key);
        if self.lookup(provider_id, key, triplet.dim())?.is_some() {
            return Ok(());
        }
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensor = Tensor::new(key, vec![3, triplet.dim()], triplet.concat())?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&tensor.to_bytes()).map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::providers::{EmbeddingProvider, MeanPoolEmbedder};
    use crate::decomposition::{embed_triplet, BinaryMask, StimulusTriplet};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: MeanPoolEmbedder,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn provider_id(&self) -> String {
            self.inner.provider_id()
        }
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn embed(&self, image: &Image<f32>) -> std::result::Result<Vec<f32>, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed(image)
        }
    }

    fn triplet() -> StimulusTriplet {
        let raw = Image::new(4, 4, 3, (0..48).map(|i| 0.1 + i as f32 / 48.0).collect()).unwrap();
        let mask = BinaryMask::new(4, 4, (0..16).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let foreground = crate::decomposition::extract_foreground(&raw, &mask).unwrap();
        StimulusTriplet {
            mask,
            foreground,
            raw,
            tau: 0.5,
        }
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let p = Counting {
            inner: MeanPoolEmbedder::new(4),
            calls: AtomicUsize::new(0),
        };
        let t = triplet();
        let a = embed_triplet("x", &t, &p, Some(&cache)).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
        let b = embed_triplet("x", &t, &p, Some(&cache)).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
        assert_eq!(a, b);
        // cached value equals direct embedding
        assert_eq!(a, embed_triplet("x", &t, &p, None).unwrap());
    }

    #[test]
    fn corrupted_entry_is_recomputed_and_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let p = Counting {
            inner: MeanPoolEmbedder::new(4),
            calls: AtomicUsize::new(0),
        };
        let t = triplet();
        let good = embed_triplet("x", &t, &p, Some(&cache)).unwrap();
        let key = EmbeddingCache::key(&p.provider_id(), t.tau, &t.raw);
        let path = cache.path(&p.provider_id(), &key);
        fs::write(&path, b"garbage").unwrap();

        let again = embed_triplet("x", &t, &p, Some(&cache)).unwrap();
        assert_eq!(again, good);
        assert_eq!(p.calls.load(Ordering::SeqCst), 6);
        // rewritten: next call is a hit
        embed_triplet("x", &t, &p, Some(&cache)).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), 6);
    }

    #[test]
    fn key_depends_on_provider_tau_and_pixels() {
        let t = triplet();
        let k = EmbeddingCache::key("a", 0.5, &t.raw);
        assert_eq!(k.len(), 64);
        assert_ne!(k, EmbeddingCache::key("b", 0.5, &t.raw));
        assert_ne!(k, EmbeddingCache::key("a", 0.6, &t.raw));
        let mut other = t.raw.clone();
        other.data[0] += 0.25;
        assert_ne!(k, EmbeddingCache::key("a", 0.5, &other));
    }

    #[test]
    fn concurrent_writers_agree() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let p = MeanPoolEmbedder::new(4);
        let t = triplet();
        let results: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|_| s.spawn(|| embed_triplet("x", &t, &p, Some(&cache)).unwrap()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.windows(2).all(|w| w[0] == w[1]));
    }
}
