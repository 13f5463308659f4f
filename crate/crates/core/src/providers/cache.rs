//! On-disk JSON response cache.
//!
//! Layout: `<dir>/<kind>/<cache_key>.json`, one human-readable file per
//! request holding the request payload and the response. Writes go to a
//! temporary file that is renamed into place, so concurrent writers of the
//! same key leave a valid entry behind.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    check_dim, CandidateGenerator, CloudEmbedder, CloudRequest, GenerateRequest, ImageRequest,
    ImageTextEmbedder, ProviderError, ProviderRequest, RawCandidate, RequestKind, TextEmbedder,
};
use crate::model::EmbeddingVector;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Corrupt entries that were re-fetched and rewritten.
    pub repairs: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    repairs: AtomicU64,
}

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    kind: RequestKind,
    model_id: String,
    cache_key: String,
    request: serde_json::Value,
    response: T,
}

impl ResponseCache {
    /// Opens (creating if needed) a cache rooted at `dir` and checks that it
    /// is writable.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        let unwritable = || ProviderError::CacheDirUnwritable(dir.display().to_string());
        std::fs::create_dir_all(&dir).map_err(|_| unwritable())?;
        let probe = dir.join(format!(".probe-{}", std::process::id()));
        std::fs::write(&probe, b"").map_err(|_| unwritable())?;
        let _ = std::fs::remove_file(&probe);
        Ok(Self {
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            repairs: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, req: &ProviderRequest) -> PathBuf {
        self.dir
            .join(req.kind.as_str())
            .join(format!("{}.json", req.cache_key))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            repairs: self.repairs.load(Ordering::Relaxed),
        }
    }

    /// Returns the stored response for `req`, or calls `backing`, stores its
    /// result and returns it. Unreadable entries count as misses and are
    /// rewritten.
    pub fn cached_call<T, F>(&self, req: &ProviderRequest, backing: F) -> Result<T, ProviderError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, ProviderError>,
    {
        let path = self.entry_path(req);
        let mut corrupt = false;
        if let Ok(bytes) = std::fs::read(&path) {
            match serde_json::from_slice::<Entry<T>>(&bytes) {
                Ok(e) if e.cache_key == req.cache_key => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(e.response);
                }
                _ => {
                    log::warn!("cache entry {} is corrupt, refetching", path.display());
                    corrupt = true;
                }
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = backing()?;
        let entry = Entry {
            kind: req.kind,
            model_id: req.model_id.clone(),
            cache_key: req.cache_key.clone(),
            request: req.payload.clone(),
            response,
        };
        self.write_atomic(&path, &entry)?;
        if corrupt {
            self.repairs.fetch_add(1, Ordering::Relaxed);
        }
        Ok(entry.response)
    }

    fn write_atomic<T: Serialize>(&self, path: &Path, entry: &Entry<T>) -> Result<(), ProviderError> {
        let unwritable = || ProviderError::CacheDirUnwritable(self.dir.display().to_string());
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent).map_err(|_| unwritable())?;
        let tmp = parent.join(format!(
            ".{}.{}.{}.tmp",
            path.file_name().unwrap().to_string_lossy(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        std::fs::write(&tmp, body).map_err(|_| unwritable())?;
        std::fs::rename(&tmp, path).map_err(|_| {
            let _ = std::fs::remove_file(&tmp);
            unwritable()
        })
    }
}

/// Any provider, answered from the cache when possible.
pub struct Cached<P> {
    inner: P,
    cache: Arc<ResponseCache>,
}

impl<P> Cached<P> {
    pub fn new(inner: P, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }
}

impl<P: CandidateGenerator> CandidateGenerator for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<RawCandidate>, ProviderError> {
        let key = ProviderRequest::generate(self.inner.model_id(), req);
        self.cache.cached_call(&key, || self.inner.generate(req))
    }
}

impl<P: TextEmbedder> TextEmbedder for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let key = ProviderRequest::text(RequestKind::EmbedText, self.inner.model_id(), text);
        let v = self.cache.cached_call(&key, || self.inner.embed_text(text))?;
        check_dim(self.dim(), v)
    }
}

impl<P: ImageTextEmbedder> ImageTextEmbedder for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_image(&self, req: &ImageRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        let key = ProviderRequest::image(self.inner.model_id(), req);
        let v = self.cache.cached_call(&key, || self.inner.embed_image(req))?;
        check_dim(self.dim(), v)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        // joint-space text lives under its own model id so it never collides
        // with the clustering embedder
        let model = format!("{}#text", self.inner.model_id());
        let key = ProviderRequest::text(RequestKind::EmbedText, &model, text);
        let v = self.cache.cached_call(&key, || self.inner.embed_text(text))?;
        check_dim(self.dim(), v)
    }
}

impl<P: CloudEmbedder> CloudEmbedder for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_cloud(&self, req: &CloudRequest<'_>) -> Result<EmbeddingVector, ProviderError> {
        let key = ProviderRequest::cloud(self.inner.model_id(), req);
        let v = self.cache.cached_call(&key, || self.inner.embed_cloud(req))?;
        check_dim(self.dim(), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn req(text: &str) -> ProviderRequest {
        ProviderRequest::text(RequestKind::EmbedText, "m", text)
    }

    #[test]
    fn hit_skips_backing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let calls = AtomicUsize::new(0);
        let backing = || {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok::<_, ProviderError>(vec![1.0, 2.0])
        };
        let a: Vec<f64> = cache.cached_call(&req("x"), backing).unwrap();
        let b: Vec<f64> = cache.cached_call(&req("x"), backing).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1, repairs: 0 });
        assert!(cache.entry_path(&req("x")).starts_with(dir.path().join("embed_text")));
    }

    #[test]
    fn corrupt_entry_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let r = req("y");
        let _: Vec<f64> = cache.cached_call(&r, || Ok(vec![0.5])).unwrap();
        std::fs::write(cache.entry_path(&r), b"{ not json").unwrap();
        let calls = AtomicUsize::new(0);
        let v: Vec<f64> = cache
            .cached_call(&r, || {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(vec![0.5])
            })
            .unwrap();
        assert_eq!(v, vec![0.5]);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.stats().repairs, 1);
        // repaired entry is served again
        let _: Vec<f64> = cache.cached_call(&r, || panic!("should hit")).unwrap();
    }

    #[test]
    fn backing_errors_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let r = req("z");
        let e = cache.cached_call::<Vec<f64>, _>(&r, || Err(ProviderError::ProviderUnavailable("down".into())));
        assert!(e.is_err());
        assert!(!cache.entry_path(&r).exists());
    }

    #[test]
    fn unwritable_dir_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        std::fs::write(&file, b"").unwrap();
        assert!(matches!(
            ResponseCache::open(file.join("cache")),
            Err(ProviderError::CacheDirUnwritable(_))
        ));
    }
}
