//! Append-only on-disk cache of forward-model evaluations.
//!
//! Records are keyed by (fidelity, θ quantized to 15 significant digits) and
//! store the forward outputs, so a replay with the same schedule performs
//! zero fresh solves. The file is flushed per record; an interrupted run
//! leaves a valid prefix.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tempered_transport::models::Forward;
use tempered_transport::{Error, Result};

pub struct EvalCache {
    dim: usize,
    map: Mutex<HashMap<(usize, String), Vec<f64>>>,
    writer: Mutex<BufWriter<File>>,
    misses: AtomicU64,
    hits: AtomicU64,
}

fn quantize(theta: &[f64]) -> String {
    theta
        .iter()
        .map(|x| format!("{x:.15e}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl EvalCache {
    pub fn open(path: &Path, dim: usize) -> Result<EvalCache> {
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(
                File::open(path).map_err(|e| Error::contract(format!("cache open: {e}")))?,
            );
            for (lineno, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::contract(format!("cache read: {e}")))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').collect();
                if parts.len() < dim + 2 {
                    return Err(Error::contract(format!(
                        "cache line {} is truncated",
                        lineno + 1
                    )));
                }
                let fidelity: usize = parts[0].parse().map_err(|_| {
                    Error::contract(format!("cache line {}: bad fidelity", lineno + 1))
                })?;
                // The key reuses the stored text verbatim so reloads match
                // fresh quantizations bit for bit.
                let key = parts[1..=dim].join(",");
                let outputs: Vec<f64> = parts[dim + 1..]
                    .iter()
                    .map(|s| {
                        s.parse().map_err(|_| {
                            Error::contract(format!("cache line {}: bad output", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if map.insert((fidelity, key), outputs).is_some() {
                    return Err(Error::contract(format!(
                        "cache line {} duplicates an earlier key",
                        lineno + 1
                    )));
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::contract(format!("cache open for append: {e}")))?;
        Ok(EvalCache {
            dim,
            map: Mutex::new(map),
            writer: Mutex::new(BufWriter::new(file)),
            misses: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records per fidelity, 1-based indices up to `num_fidelities`.
    pub fn record_counts(&self, num_fidelities: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_fidelities];
        for (f, _) in self.map.lock().unwrap().keys() {
            if *f >= 1 && *f <= num_fidelities {
                counts[f - 1] += 1;
            }
        }
        counts
    }

    /// Fresh solves performed since this cache was opened.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    fn get_or_insert<F>(&self, fidelity: usize, theta: &[f64], eval: F) -> Result<Vec<f64>>
    where
        F: FnOnce() -> Result<Vec<f64>>,
    {
        let key = (fidelity, quantize(theta));
        if let Some(hit) = self.map.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        let outputs = eval()?;
        let mut map = self.map.lock().unwrap();
        if let Some(hit) = map.get(&key) {
            // A parallel worker raced us to the same point.
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        {
            let mut w = self.writer.lock().unwrap();
            let row: Vec<String> = outputs.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{fidelity},{},{}", key.1, row.join(","))
                .and_then(|_| w.flush())
                .map_err(|e| Error::contract(format!("cache write: {e}")))?;
        }
        map.insert(key, outputs.clone());
        self.misses.fetch_add(1, Ordering::Relaxed);
        Ok(outputs)
    }
}

/// Forward model wrapper that consults the cache before solving.
pub struct CachedForward {
    inner: Arc<dyn Forward>,
    fidelity: usize,
    cache: Arc<EvalCache>,
}

impl CachedForward {
    pub fn new(inner: Arc<dyn Forward>, fidelity: usize, cache: Arc<EvalCache>) -> Result<Self> {
        if inner.dim() != cache.dim {
            return Err(Error::contract("cache dimension mismatch"));
        }
        Ok(CachedForward {
            inner,
            fidelity,
            cache,
        })
    }
}

impl Forward for CachedForward {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn num_outputs(&self) -> usize {
        self.inner.num_outputs()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.cache
            .get_or_insert(self.fidelity, theta, || self.inner.evaluate(theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        calls: AtomicUsize,
    }

    impl Forward for Counting {
        fn dim(&self) -> usize {
            2
        }
        fn num_outputs(&self) -> usize {
            1
        }
        fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(vec![theta[0] * 2.0 + theta[1]])
        }
    }

    #[test]
    fn cache_round_trip_and_counters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let inner = Arc::new(Counting {
            calls: AtomicUsize::new(0),
        });
        {
            let cache = Arc::new(EvalCache::open(&path, 2).unwrap());
            let fw = CachedForward::new(inner.clone(), 1, cache.clone()).unwrap();
            let a = fw.evaluate(&[0.125, 0.5]).unwrap();
            let b = fw.evaluate(&[0.125, 0.5]).unwrap();
            assert_eq!(a, b);
            assert_eq!(cache.misses(), 1);
            assert_eq!(cache.hits(), 1);
            fw.evaluate(&[0.3, 0.7]).unwrap();
            assert_eq!(cache.record_counts(1), vec![2]);
        }
        assert_eq!(inner.calls.load(Ordering::Relaxed), 2);
        // Reload: everything is a hit, nothing is recomputed.
        let cache = Arc::new(EvalCache::open(&path, 2).unwrap());
        assert_eq!(cache.len(), 2);
        let fw = CachedForward::new(inner.clone(), 1, cache.clone()).unwrap();
        let v = fw.evaluate(&[0.125, 0.5]).unwrap();
        assert_eq!(v, vec![0.75]);
        assert_eq!(cache.misses(), 0);
        assert_eq!(inner.calls.load(Ordering::Relaxed), 2);
    }

    #[test]
    fn full_precision_values_survive_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let theta = [std::f64::consts::FRAC_1_PI, 0.123456789012345678];
        let value = 0.1 + 0.2; // not exactly representable as 0.3
        {
            let cache = EvalCache::open(&path, 2).unwrap();
            cache.get_or_insert(3, &theta, || Ok(vec![value])).unwrap();
        }
        let cache = EvalCache::open(&path, 2).unwrap();
        let got = cache
            .get_or_insert(3, &theta, || panic!("must hit"))
            .unwrap();
        assert_eq!(got[0].to_bits(), value.to_bits());
    }

    #[test]
    fn nearby_points_quantize_to_distinct_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let cache = EvalCache::open(&path, 1).unwrap();
        cache.get_or_insert(1, &[0.5], || Ok(vec![1.0])).unwrap();
        cache.get_or_insert(1, &[0.5001], || Ok(vec![2.0])).unwrap();
        assert_eq!(cache.misses(), 2);
    }
}
