#![allow(dead_code)]

use std::collections::HashSet;
use std::fs;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tutor_core::MCQuestion;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Random unit vectors drawn from a seeded generator.
pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / norm) as f32).collect()
        })
        .collect()
}

/// Brute-force top-k: score every row in f64, sort by (-score, row), take k.
pub fn oracle_top_k(rows: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s: f64 = r.iter().zip(q).map(|(a, b)| *a as f64 * *b as f64).sum();
            (i, s.clamp(-1.0, 1.0))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Whitespace-separated words run through a character-class splitter that
/// does not share code with the crate's tokenizer.
pub fn independent_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

const SYLLABLES: &[&str] = &[
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe", "qui", "ro", "su",
    "ta", "ve", "wi", "xo", "yu", "za", "bre", "cla", "dro", "fle", "gri", "plo", "stu", "tra",
    "vin",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=4);
    (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect()
}

/// `n` synthetic questions; the pairs listed in `duplicates` share question text.
pub fn synthetic_questions(n: usize, seed: u64, duplicates: &[(usize, usize)]) -> Vec<MCQuestion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qs: Vec<MCQuestion> = (0..n)
        .map(|i| {
            let words: Vec<String> = (0..8).map(|_| word(&mut rng)).collect();
            MCQuestion {
                id: format!("synthetic.csv:{i:03}"),
                subject: "synthetic".into(),
                question: format!("{}?", words.join(" ")),
                options: std::array::from_fn(|_| word(&mut rng)),
                answer_index: rng.random_range(0..4),
            }
        })
        .collect();
    for &(a, b) in duplicates {
        qs[b].question = qs[a].question.clone();
    }
    qs
}

/// Remote endpoints of this process's TCP/UDP sockets that are neither
/// loopback nor unbound. Sockets are matched by inode between
/// `/proc/self/fd` and `/proc/self/net/{tcp,tcp6,udp,udp6}`.
pub fn non_loopback_peers() -> Vec<String> {
    let mut inodes = HashSet::new();
    if let Ok(entries) = fs::read_dir("/proc/self/fd") {
        for e in entries.flatten() {
            if let Ok(target) = fs::read_link(e.path()) {
                let t = target.to_string_lossy();
                if let Some(ino) = t.strip_prefix("socket:[").and_then(|s| s.strip_suffix(']')) {
                    inodes.insert(ino.to_string());
                }
            }
        }
    }
    let mut bad = Vec::new();
    for table in ["tcp", "tcp6", "udp", "udp6"] {
        let Ok(text) = fs::read_to_string(format!("/proc/self/net/{table}")) else {
            continue;
        };
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 10 || !inodes.contains(cols[9]) {
                continue;
            }
            for addr in [cols[1], cols[2]] {
                let ip = parse_proc_addr(addr);
                if let Some(ip) = ip {
                    if !(ip.is_loopback() || ip.is_unspecified() || is_mapped_loopback(&ip)) {
                        bad.push(format!("{table} {addr} -> {ip}"));
                    }
                }
            }
        }
    }
    bad
}

fn is_mapped_loopback(ip: &IpAddr) -> bool {
    match ip {
        IpAddr::V6(v6) => v6.to_ipv4_mapped().is_some_and(|v4| v4.is_loopback() || v4.is_unspecified()),
        _ => false,
    }
}

pub fn parse_proc_addr(s: &str) -> Option<IpAddr> {
    let (hex, _port) = s.split_once(':')?;
    match hex.len() {
        8 => {
            let v = u32::from_str_radix(hex, 16).ok()?;
            Some(IpAddr::V4(Ipv4Addr::from(v.swap_bytes())))
        }
        32 => {
            let mut bytes = [0u8; 16];
            for word in 0..4 {
                let w = u32::from_str_radix(&hex[word * 8..word * 8 + 8], 16).ok()?;
                bytes[word * 4..word * 4 + 4].copy_from_slice(&w.to_le_bytes());
            }
            Some(IpAddr::V6(Ipv6Addr::from(bytes)))
        }
        _ => None,
    }
}
