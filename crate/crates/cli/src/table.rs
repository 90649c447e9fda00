//! Leakage per (CPU, cache level), computed through the flush/refill pipeline.

use std::io;

use flushleak::leakage::leakage_for_cache_level;
use flushleak::par::{self, Execution};
use serde::Serialize;

use crate::config::{CacheLevel, CpuConfig, PolicyName};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub cpu: String,
    pub microarch: String,
    pub level: CacheLevel,
    pub assoc: usize,
    pub policy: PolicyName,
    pub flush_preserves_control: bool,
    pub leakage_bits: f64,
}

/// One row per level of every config, sorted by CPU name then level.
pub fn compute_table(configs: &[CpuConfig], exec: Execution) -> flushleak::Result<Vec<TableRow>> {
    let mut jobs: Vec<(&CpuConfig, &crate::config::LevelConfig)> = configs
        .iter()
        .flat_map(|c| c.levels.iter().map(move |l| (c, l)))
        .collect();
    jobs.sort_by(|a, b| (&a.0.name, a.1.level).cmp(&(&b.0.name, b.1.level)));
    par::map_slice(exec, &jobs, |(cpu, level)| {
        let leakage_bits = leakage_for_cache_level(level.policy_config()?, level.behavior())?;
        Ok(TableRow {
            cpu: cpu.name.clone(),
            microarch: cpu.microarch.clone(),
            level: level.level,
            assoc: level.assoc,
            policy: level.policy,
            flush_preserves_control: level.flush_preserves_control,
            leakage_bits,
        })
    })
    .into_iter()
    .collect()
}

/// CSV with header
/// `cpu,microarch,level,assoc,policy,flush_preserves_control,leakage_bits`.
/// Leakage is printed with six decimals so that rounding the printed value
/// agrees with rounding the exact one.
pub fn write_table_csv<W: io::Write>(rows: &[TableRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "cpu",
        "microarch",
        "level",
        "assoc",
        "policy",
        "flush_preserves_control",
        "leakage_bits",
    ])?;
    for r in rows {
        let policy = serde_json::to_value(r.policy).expect("enum serializes");
        w.write_record([
            r.cpu.clone(),
            r.microarch.clone(),
            r.level.to_string(),
            r.assoc.to_string(),
            policy.as_str().expect("policy is a string").to_string(),
            r.flush_preserves_control.to_string(),
            format!("{:.6}", r.leakage_bits),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::bundled_configs;

    #[test]
    fn bundled_table() {
        let rows = compute_table(&bundled_configs(), Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 33);
        let leaky: Vec<(&str, CacheLevel)> = rows
            .iter()
            .filter(|r| r.leakage_bits > 0.0)
            .map(|r| (r.microarch.as_str(), r.level))
            .collect();
        assert_eq!(leaky.len(), 7);
        assert!(leaky.contains(&("Haswell", CacheLevel::L1)));
        assert!(leaky.contains(&("Skylake", CacheLevel::L2)));
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("Core i7-4790,Haswell,L1,8,plru,true,7.000000"));
        assert!(text.contains("Core i5-6500,Skylake,L2,4,qlru_h00_m1_r2_u1,true,3.174878"));
    }
}
