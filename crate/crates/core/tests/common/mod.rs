#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use qchunker_core::clients::http::{HttpBackend, HttpConfig, ReplayTransport, RetryPolicy};
use qchunker_core::corpus::{load_jsonl, Document};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn http_fixtures() -> PathBuf {
    fixtures().join("http")
}

pub fn two_topic() -> Document {
    load_jsonl(fixtures().join("two_topic.jsonl")).unwrap().remove(0)
}

pub fn http_config() -> HttpConfig {
    HttpConfig {
        base_url: "https://models.example.test/".into(),
        api_key: Some("sk-fixture".into()),
        chat_model: "chat-model".into(),
        embed_model: "embed-model".into(),
        score_model: "score-model".into(),
        retry: RetryPolicy { max_retries: 3, base_delay_ms: 100, max_delay_ms: 1_000 },
        ..Default::default()
    }
}

/// Backend over a replay transport whose retry sleeps are recorded, not slept.
pub fn replay_backend(cfg: HttpConfig) -> (HttpBackend, Arc<ReplayTransport>, Arc<Mutex<Vec<Duration>>>) {
    let transport = Arc::new(ReplayTransport::new());
    let slept = Arc::new(Mutex::new(Vec::new()));
    let log = slept.clone();
    let backend = HttpBackend::new(cfg, transport.clone())
        .unwrap()
        .with_sleeper(move |d| log.lock().unwrap().push(d));
    (backend, transport, slept)
}

/// LCS by full-table dynamic programming.
pub fn lcs_table(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

/// Lowercased alphanumeric words; enough for the ASCII fixtures.
pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
pub fn cholesky_logdet(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                assert!(d > 0.0, "matrix not positive definite");
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    (0..n).map(|i| 2.0 * l[i][i].ln()).sum()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn lu_det(m: &[Vec<f64>]) -> f64 {
    let mut a = m.to_vec();
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        let pivot = a[c].clone();
        for row in a.iter_mut().skip(c + 1) {
            let f = row[c] / pivot[c];
            row.iter_mut().zip(&pivot).skip(c).for_each(|(x, p)| *x -= f * p);
        }
    }
    det
}

/// `Zᵀ J Z` written out entry by entry: feature-centred inner products.
pub fn centered_gram_naive(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = cols[0].len() as f64;
    let centred: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / d;
            c.iter().map(|x| x - m).collect()
        })
        .collect();
    centred
        .iter()
        .map(|a| centred.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

/// Pearson r from raw sums.
pub fn pearson_sums(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn random_unit_columns(rng: &mut impl rand::Rng, d: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}
