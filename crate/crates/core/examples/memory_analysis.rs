//! Coverage of supporting facts by memory, the F1-vs-memory-size curve and
//! rare-token entropy statistics, on synthetic profiles.

use std::collections::{BTreeMap, BTreeSet};

use memqa::analysis::{
    coverage_csv, coverage_table, curve_csv, f1_vs_memory_curve, join_views, rare_stats_csv, rare_token_stats,
};
use memqa::memory::{populate_memory, EntropyProfile, MemoryPolicy, PolicyKind, ProfileEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> memqa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut profiles = Vec::new();
    let mut memories = BTreeMap::new();
    let mut evidence = BTreeMap::new();
    let mut scores = BTreeMap::new();
    let mut sizes = Vec::new();

    for i in 0..60 {
        let len = rng.gen_range(80..160);
        let profile = EntropyProfile {
            entries: (0..len)
                .map(|p| ProfileEntry {
                    doc_position: p,
                    token_id: rng.gen_range(10..60),
                    entropy: rng.gen_range(0.0..0.02),
                    eligible: rng.gen_bool(0.8),
                })
                .collect(),
        };
        let policy = MemoryPolicy {
            k: rng.gen_range(4..30),
            theta: 0.01,
            ..MemoryPolicy::of(PolicyKind::LowHFixed)
        };
        let mem = populate_memory(&profile, &policy)?;
        let ev: BTreeSet<usize> = (0..len).filter(|_| rng.gen_bool(0.15)).collect();
        let id = format!("s{i:03}");
        let f1 = if rng.gen_bool(0.4) { 1.0 } else { rng.gen_range(0.0..1.0) };
        sizes.push((mem.len(), f1));
        memories.insert(id.clone(), mem.positions().into_iter().collect::<BTreeSet<_>>());
        evidence.insert(id.clone(), ev);
        scores.insert(id, f1);
        profiles.push(profile);
    }

    let views = join_views(&memories, &evidence, &scores)?;
    print!("{}", coverage_csv(&coverage_table(&views)));

    let curve = f1_vs_memory_curve(&sizes, 10)?;
    println!("{} curve points, overall mean {:.3}", curve.points.len(), curve.overall_mean);
    print!("{}", curve_csv(&curve).lines().take(5).collect::<Vec<_>>().join("\n"));
    println!();

    let mem_sets: Vec<BTreeSet<usize>> = memories.values().cloned().collect();
    let rare = rare_token_stats(&profiles, &mem_sets, 5)?;
    print!("{}", rare_stats_csv(&rare));
    Ok(())
}
