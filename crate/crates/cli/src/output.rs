// Licensed under the Apache-2.0 license

use std::fmt::Write as _;

use lirav_core::attack::ScenarioResult;
use lirav_core::bench::{find_cell, CrtmSample, ProtocolSample};

use crate::Format;

#[derive(Debug, Default)]
pub struct BenchReport {
    pub crtm: Vec<CrtmSample>,
    pub protocol: Vec<ProtocolSample>,
}

fn human(bytes: u32) -> String {
    match bytes {
        b if b >= 1 << 20 && b % (1 << 20) == 0 => format!("{}M", b >> 20),
        b if b >= 1 << 10 && b % (1 << 10) == 0 => format!("{}K", b >> 10),
        b => format!("{b}"),
    }
}

fn ratio(samples: &[CrtmSample], num: u32, den: u32, block: u32) -> Option<f64> {
    let n = find_cell(samples, num, block)?;
    let d = find_cell(samples, den, block)?;
    Some(n.mean.as_secs_f64() / d.mean.as_secs_f64())
}

pub fn render_bench(r: &BenchReport, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(
                "kind,size_bytes,block_bytes,iters,mean_us,min_us,bytes_hashed,hash_calls,established\n",
            );
            for s in &r.crtm {
                let _ = writeln!(
                    out,
                    "crtm,{},{},{},{:.1},{:.1},{},{},",
                    s.size,
                    s.block,
                    s.iters,
                    s.mean.as_secs_f64() * 1e6,
                    s.min.as_secs_f64() * 1e6,
                    s.stats.bytes_hashed,
                    s.stats.hash_calls
                );
            }
            for p in &r.protocol {
                let _ = writeln!(
                    out,
                    "protocol,{},,{},{:.1},,,,{}",
                    p.attested_len,
                    p.iters,
                    p.mean.as_secs_f64() * 1e6,
                    p.established
                );
            }
        }
        Format::Text => {
            if !r.crtm.is_empty() {
                let iters = r.crtm[0].iters;
                let _ = writeln!(out, "CRTM wall time, mean of {iters} iterations");
                let _ = writeln!(
                    out,
                    "{:>6} {:>6} {:>12} {:>12} {:>12} {:>8}",
                    "size", "block", "mean_us", "min_us", "bytes", "hashes"
                );
                for s in &r.crtm {
                    let _ = writeln!(
                        out,
                        "{:>6} {:>6} {:>12.1} {:>12.1} {:>12} {:>8}",
                        human(s.size),
                        human(s.block),
                        s.mean.as_secs_f64() * 1e6,
                        s.min.as_secs_f64() * 1e6,
                        s.stats.bytes_hashed,
                        s.stats.hash_calls
                    );
                }
                let mut blocks: Vec<u32> = r.crtm.iter().map(|s| s.block).collect();
                blocks.sort_unstable();
                blocks.dedup();
                for b in &blocks {
                    for (num, den) in [(128 << 10, 64 << 10), (256 << 10, 128 << 10)] {
                        if let Some(x) = ratio(&r.crtm, num, den, *b) {
                            let _ = writeln!(
                                out,
                                "ratio {}/{} at block {}: {x:.3}",
                                human(num),
                                human(den),
                                human(*b)
                            );
                        }
                    }
                }
                if let (Some(small), Some(large)) = (
                    find_cell(&r.crtm, 4 << 20, 1024),
                    find_cell(&r.crtm, 4 << 20, 4096),
                ) {
                    let t1 = small.mean.as_secs_f64();
                    let t4 = large.mean.as_secs_f64();
                    let _ = writeln!(
                        out,
                        "block effect at 4M (1K vs 4K): {:.1}%",
                        (t1 - t4) / t1 * 100.0
                    );
                }
            }
            if !r.protocol.is_empty() {
                let iters = r.protocol[0].iters;
                let _ = writeln!(
                    out,
                    "Protocol end to end (in-memory channel), mean of {iters} runs"
                );
                let _ = writeln!(
                    out,
                    "{:>8} {:>10} {:>12}",
                    "attested", "mean_ms", "established"
                );
                for p in &r.protocol {
                    let _ = writeln!(
                        out,
                        "{:>8} {:>10.2} {:>12}",
                        human(p.attested_len),
                        p.mean.as_secs_f64() * 1e3,
                        format!("{}/{}", p.established, p.iters)
                    );
                }
            }
        }
    }
    out
}

pub fn render_attack(results: &[ScenarioResult], format: Format) -> String {
    let mut out = String::new();
    let status = |r: &ScenarioResult| if r.passed() { "PASS" } else { "FAIL" };
    match format {
        Format::Csv => {
            out.push_str("scenario,expected,observed,result\n");
            for r in results {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    r.name,
                    r.expected,
                    r.observed,
                    status(r)
                );
            }
        }
        Format::Text => {
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(8);
            for r in results {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:<4}  expected {}  observed {}",
                    r.name,
                    status(r),
                    r.expected,
                    r.observed
                );
            }
            let passed = results.iter().filter(|r| r.passed()).count();
            let _ = writeln!(out, "{passed}/{} scenarios detected", results.len());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_print_compactly() {
        assert_eq!(human(1024), "1K");
        assert_eq!(human(4 << 20), "4M");
        assert_eq!(human(1000), "1000");
    }
}
