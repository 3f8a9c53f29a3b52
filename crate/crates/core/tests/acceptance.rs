//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use fat_core::cost_model::{max_cell_writes_per_dot, simulate_sparsity, AddScheme, Calibration};
use fat_core::engine::{reference_network, run_network};
use fat_core::mapping::{fixed_layout, layout_with_intervals, ConvShape, HwConfig, Scheme};
use fat_core::memory_array::{Cma, CmaGeometry, ColumnMask, OperandSlot, RowSpan};
use fat_core::model::{InputShape, LayerSpec, TwnModel, WeightSource};
use fat_core::report::map_compare;
use fat_core::sa_logic::{evaluate, SaConfig, SaOp};
use fat_core::sparse_control::{AccPolicy, AccumulatorPool, Sacu, WeightRegisterFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn close(got: f64, want: f64, tol: f64) -> bool {
    ((got - want) / want).abs() <= tol
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("took {t:?}, limit {limit:?}"));
    }
    Ok(())
}

fn truth_tables() -> Outcome {
    let start = Instant::now();
    for a in [false, true] {
        for b in [false, true] {
            for cin in [false, true] {
                let (sum, c) = evaluate(a, b, SaConfig::for_op(SaOp::Add), cin);
                let total = a as u8 + b as u8 + cin as u8;
                if sum != (total & 1 == 1) || c.cout != (total >= 2) {
                    return Err(format!("full adder wrong at a={a} b={b} cin={cin}"));
                }
                let expect = [
                    (SaOp::Read, a),
                    (SaOp::Not, !a),
                    (SaOp::And, a && b),
                    (SaOp::Nand, !(a && b)),
                    (SaOp::Or, a || b),
                    (SaOp::Xor, a ^ b),
                ];
                for (op, want) in expect {
                    // NOT pairs the operand with the constant-ones row.
                    let rhs = if op == SaOp::Not { true } else { b };
                    let (got, _) = evaluate(a, rhs, SaConfig::for_op(op), cin);
                    if got != want {
                        return Err(format!("{op:?} wrong at a={a} b={b} cin={cin}"));
                    }
                }
            }
        }
    }
    within(Duration::from_secs(1), start)?;
    Ok("8 full-adder cases, 6 Boolean ops x 8 inputs".into())
}

fn arithmetic_oracle() -> Outcome {
    let start = Instant::now();
    let g = CmaGeometry { cols: 64, ..Default::default() };
    let mut cma = Cma::new(g).map_err(|e| e.to_string())?;
    let mask = ColumnMask::all(64);
    let mut cases = 0u64;
    let mut check = |cma: &mut Cma, width: u32, pairs: &[(i64, i64)]| -> Result<(), String> {
        let (a, b, d, s) = (RowSpan::new(0, width), RowSpan::new(16, width), RowSpan::new(32, width), RowSpan::new(48, width));
        for (c, &(x, y)) in pairs.iter().enumerate() {
            cma.write_operand(OperandSlot::unsigned(c, 0, width), x).map_err(|e| e.to_string())?;
            cma.write_operand(OperandSlot::unsigned(c, 16, width), y).map_err(|e| e.to_string())?;
        }
        let m = (1i64 << width) - 1;
        cma.vector_add(a, b, d, width, &mask).map_err(|e| e.to_string())?;
        for (c, &(x, y)) in pairs.iter().enumerate() {
            if cma.peek_operand(OperandSlot::unsigned(c, 32, width)) != (x + y) & m {
                return Err(format!("{width}-bit {x}+{y}"));
            }
        }
        cma.vector_sub(a, b, d, s, width, &mask).map_err(|e| e.to_string())?;
        for (c, &(x, y)) in pairs.iter().enumerate() {
            if cma.peek_operand(OperandSlot::unsigned(c, 32, width)) != (x - y) & m {
                return Err(format!("{width}-bit {x}-{y}"));
            }
        }
        cases += 2 * pairs.len() as u64;
        Ok(())
    };
    for width in 1..=6u32 {
        let n = 1i64 << width;
        let all: Vec<(i64, i64)> = (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).collect();
        for chunk in all.chunks(64) {
            check(&mut cma, width, chunk)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut random = 0;
    for width in [8u32, 16] {
        let m = (1i64 << width) - 1;
        for _ in 0..160 {
            let pairs: Vec<(i64, i64)> = (0..64).map(|_| (rng.gen_range(0..=m), rng.gen_range(0..=m))).collect();
            check(&mut cma, width, &pairs)?;
            random += 64;
        }
    }
    if !cma.constant_rows_intact() {
        return Err("constant rows modified".into());
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("{cases} add/sub cases ({random} random pairs per op at widths 8/16)"))
}

fn sparse_dot_product() -> Outcome {
    let hw = HwConfig { geometry: CmaGeometry { cols: 64, ..Default::default() }, ..Default::default() };
    let g = hw.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = 0u64;
    let mut edges = [0u32; 3];
    for (scheme, policy) in [(Scheme::Img2ColCs, AccPolicy::Rotating), (Scheme::Img2ColIs, AccPolicy::Fixed)] {
        let layout = match scheme {
            Scheme::Img2ColCs => layout_with_intervals(32, &hw),
            _ => fixed_layout(32, &hw),
        }
        .map_err(|e| e.to_string())?;
        let mut cma = Cma::new(g).map_err(|e| e.to_string())?;
        let mut sacu = Sacu::new(AccumulatorPool::new(layout.positions.clone(), policy).map_err(|e| e.to_string())?);
        for trial in 0..120 {
            let len = rng.gen_range(1..=32);
            let w: Vec<i64> = (0..len)
                .map(|_| match trial % 4 {
                    0 => rng.gen_range(0..=1),
                    1 => rng.gen_range(-1..=0),
                    2 if trial % 8 == 2 => 0,
                    _ => rng.gen_range(-1..=1),
                })
                .collect();
            let p = w.iter().filter(|&&v| v == 1).count();
            let m = w.iter().filter(|&&v| v == -1).count();
            match (p, m) {
                (0, 0) => edges[2] += 1,
                (0, _) => edges[0] += 1,
                (_, 0) => edges[1] += 1,
                _ => {}
            }
            let acts: Vec<Vec<i64>> = (0..64).map(|_| (0..len).map(|_| rng.gen_range(0..256)).collect()).collect();
            for (c, col) in acts.iter().enumerate() {
                for (k, &a) in col.iter().enumerate() {
                    cma.write_operand(OperandSlot::unsigned(c, layout.operands[k].base_row, 8), a)
                        .map_err(|e| e.to_string())?;
                }
            }
            sacu.load_weights(&mut cma, &w).map_err(|e| e.to_string())?;
            let out = sacu.dot_product(&mut cma, &layout.operands[..len], &ColumnMask::all(64)).map_err(|e| e.to_string())?;
            for (c, col) in acts.iter().enumerate() {
                let want: i64 = w.iter().zip(col).map(|(x, y)| x * y).sum();
                let got = cma.peek_operand(OperandSlot::signed(c, out.result.base_row, 16));
                if got != want {
                    return Err(format!("{} trial {trial} column {c}: {got} != {want}", scheme.name()));
                }
            }
            let zero_rows: Vec<usize> = (0..len).filter(|&k| w[k] == 0).map(|k| layout.operands[k].base_row).collect();
            for rec in &out.trace {
                if rec.operands.iter().any(|&k| w[k] == 0) || rec.rows.iter().any(|r| zero_rows.contains(r)) {
                    return Err(format!("zero-weight row activated in trial {trial}"));
                }
            }
            pairs += 64;
        }
    }
    if edges.contains(&0) {
        return Err(format!("edge cases not covered: p=0 {}, m=0 {}, p=m=0 {}", edges[0], edges[1], edges[2]));
    }
    Ok(format!("{pairs} pairs, p=0/m=0/p=m=0 cases {}/{}/{}, traces clean", edges[0], edges[1], edges[2]))
}

fn table_vii() -> Outcome {
    let start = Instant::now();
    let c = Calibration::default();
    use AddScheme::*;
    let latency = [
        (SttCim, 8, false, 8.91),
        (SttCim, 8, true, 71.26),
        (SttCim, 16, true, 146.85),
        (ParaPim, 8, false, 138.47),
        (ParaPim, 8, true, 138.47),
        (ParaPim, 16, true, 276.95),
        (GraphS, 8, false, 137.18),
        (GraphS, 8, true, 137.18),
        (GraphS, 16, true, 274.36),
        (Fat, 8, false, 69.13),
        (Fat, 8, true, 69.13),
        (Fat, 16, true, 138.26),
    ];
    let cp = [
        (SttCim, 8, false, 0.41),
        (SttCim, 8, true, 3.26),
        (SttCim, 16, true, 10.85),
        (ParaPim, 8, false, 2.47),
        (ParaPim, 8, true, 2.47),
        (ParaPim, 16, true, 4.95),
        (GraphS, 8, false, 1.18),
        (GraphS, 8, true, 1.18),
        (GraphS, 16, true, 2.36),
        (Fat, 8, false, 1.13),
        (Fat, 8, true, 1.13),
        (Fat, 16, true, 2.26),
    ];
    let mut worst = 0.0f64;
    for (s, n, vector, want) in latency {
        let got = if vector { c.vector_add_latency(s, n, 256, 256) } else { c.scalar_add_latency(s, n) }.unwrap();
        worst = worst.max(((got - want) / want).abs());
        if !close(got, want, 0.005) {
            return Err(format!("{} {n}-bit latency {got:.3} vs {want}", s.name()));
        }
    }
    // Two-decimal cells carry up to 0.005 ns of rounding.
    for (s, n, vector, want) in cp {
        let got = if vector { c.vector_critical_path(s, n, 256, 256) } else { c.scalar_critical_path(s, n) }.unwrap();
        if (got - want).abs() > 0.005 && !close(got, want, 0.005) {
            return Err(format!("{} {n}-bit CP {got:.4} vs {want}", s.name()));
        }
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!("12 latency cells (worst {:.3}%), 12 CP cells", worst * 100.0))
}

fn ordering_32_bit() -> Outcome {
    let c = Calibration::default();
    let lat = |s| c.vector_add_latency(s, 32, 256, 256).unwrap();
    let fat = lat(AddScheme::Fat);
    let mut parts = Vec::new();
    for (s, want) in [(AddScheme::SttCim, 1.12), (AddScheme::GraphS, 1.98), (AddScheme::ParaPim, 2.00)] {
        let r = lat(s) / fat;
        if !close(r, want, 0.02) {
            return Err(format!("{} / FAT = {r:.3}, want {want}", s.name()));
        }
        parts.push(format!("{} {r:.3}x", s.name()));
    }
    Ok(parts.join(", "))
}

fn sparsity_curve() -> Outcome {
    let start = Instant::now();
    let c = Calibration::default();
    let table = [(0.0, 2.00, 2.44), (0.4, 3.34, 4.06), (0.6, 5.01, 6.09), (0.8, 10.02, 12.19)];
    let mut parts = Vec::new();
    for (k, (s, sp, ee)) in table.into_iter().enumerate() {
        let (csp, cee) = c.sparsity_speedup(s).map_err(|e| e.to_string())?;
        if !close(csp, sp, 0.01) || !close(cee, ee, 0.01) {
            return Err(format!("closed form at {s}: {csp:.3}/{cee:.3} vs {sp}/{ee}"));
        }
        let (ssp, see) = simulate_sparsity(&c, s, 50, k as u64).map_err(|e| e.to_string())?;
        if !close(ssp, sp, 0.02) || !close(see, ee, 0.02) {
            return Err(format!("simulation at {s}: {ssp:.3}/{see:.3} vs {sp}/{ee}"));
        }
        parts.push(format!("{s}: {csp:.2}/{cee:.2}"));
    }
    within(Duration::from_secs(30), start)?;
    Ok(parts.join(", "))
}

fn table_vi() -> Outcome {
    let start = Instant::now();
    let shape = ConvShape { n: 5, c: 128, h: 28, w: 28, kn: 256, kh: 3, kw: 3, s: 2, p: 1 };
    let hw = HwConfig::default();
    let rows = map_compare(&shape, &hw, &Calibration::default()).map_err(|e| e.to_string())?;
    let cols = [128u64, 196, 256, 196, 256];
    let util = [0.7656, 0.7656, 0.9423, 0.7656, 0.4711];
    let speedup = [1.00, 1.17, 4.88, 1.18, 6.86];
    let energy = [1.000, 1.643, 0.568, 1.643, 0.570];
    for (k, r) in rows.iter().enumerate() {
        if r.parallel_cols != cols[k] {
            return Err(format!("{} parallel cols {}", r.scheme, r.parallel_cols));
        }
        for (what, got, want) in [
            ("utilization", r.utilization, util[k]),
            ("speedup", r.speedup, speedup[k]),
            ("energy ratio", r.energy_ratio, energy[k]),
        ] {
            if !close(got, want, 0.05) {
                return Err(format!("{} {what} {got:.4} vs {want}", r.scheme));
            }
        }
    }
    let is = max_cell_writes_per_dot(Scheme::Img2ColIs, &hw);
    let cs = max_cell_writes_per_dot(Scheme::Img2ColCs, &hw);
    if is / cs != 64 || cs != 1 {
        return Err(format!("max cell writes {is} vs {cs}"));
    }
    within(Duration::from_secs(60), start)?;
    let sp: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.speedup)).collect();
    Ok(format!("speedups {}, max cell write {is}x vs {cs}x", sp.join("/")))
}

fn toy_model(rng: &mut ChaCha8Rng) -> TwnModel {
    let c = rng.gen_range(1..=8);
    let k1 = rng.gen_range(1..=8);
    let k2 = rng.gen_range(1..=8);
    let tern = |n: usize, rng: &mut ChaCha8Rng| -> Vec<i64> { (0..n).map(|_| rng.gen_range(-1..=1)).collect() };
    let w1 = tern(k1 * c * 9, rng);
    let w2 = tern(k2 * k1, rng);
    TwnModel {
        activation_bits: 8,
        binary: false,
        input: InputShape { c, h: 8, w: 8 },
        layers: vec![
            LayerSpec::Conv {
                kn: k1,
                kh: 3,
                kw: 3,
                stride: 1,
                padding: rng.gen_range(0..=1),
                weights: WeightSource::Inline(w1),
                requant_scale: rng.gen_range(1.0..16.0),
                bias: None,
            },
            LayerSpec::Relu,
            LayerSpec::Batchnorm {
                mean: (0..k1).map(|_| rng.gen_range(-200.0..200.0)).collect(),
                var: (0..k1).map(|_| rng.gen_range(0.5..50.0)).collect(),
                eps: 1e-5,
            },
            LayerSpec::Conv {
                kn: k2,
                kh: 1,
                kw: 1,
                stride: 1,
                padding: 0,
                weights: WeightSource::Inline(w2),
                requant_scale: rng.gen_range(0.5..4.0),
                bias: None,
            },
        ],
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let hw = HwConfig::default();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = toy_model(&mut rng);
        let x: Vec<u8> = (0..model.input.c * 64).map(|_| rng.gen()).collect();
        let (ry, ra) = reference_network(&model, &x, 1).map_err(|e| e.to_string())?;
        for scheme in [Scheme::Img2ColIs, Scheme::Img2ColCs] {
            let r = run_network(&model, &x, 1, &hw, scheme).map_err(|e| format!("seed {seed}: {e}"))?;
            if r.outputs != ry || r.activations != ra {
                return Err(format!("seed {seed} {} differs from the reference", scheme.name()));
            }
        }
    }
    within(Duration::from_secs(120), start)?;
    Ok("100 seeds x {IS, CS} bit-exact".into())
}

fn wear_leveling() -> Outcome {
    let hw = HwConfig { geometry: CmaGeometry { cols: 64, ..Default::default() }, ..Default::default() };
    let g = hw.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weights: Vec<Vec<i64>> = (0..32).map(|_| (0..32).map(|_| rng.gen_range(-1..=1)).collect()).collect();
    let acts: Vec<i64> = (0..32).map(|_| rng.gen_range(0..256)).collect();

    let run = |layout: &fat_core::mapping::ColumnLayout, policy| -> Result<Cma, String> {
        let mut cma = Cma::new(g).map_err(|e| e.to_string())?;
        let mut sacu = Sacu::new(AccumulatorPool::new(layout.positions.clone(), policy).map_err(|e| e.to_string())?);
        sacu.regs = WeightRegisterFile::with_capacity(32);
        for (k, &a) in acts.iter().enumerate() {
            cma.write_operand(OperandSlot::unsigned(0, layout.operands[k].base_row, 8), a).map_err(|e| e.to_string())?;
        }
        for w in &weights {
            sacu.load_weights(&mut cma, w).map_err(|e| e.to_string())?;
            sacu.dot_product(&mut cma, &layout.operands, &ColumnMask::first(g.cols, 1)).map_err(|e| e.to_string())?;
        }
        Ok(cma)
    };

    let cs_layout = layout_with_intervals(32, &hw).map_err(|e| e.to_string())?;
    let cs = run(&cs_layout, AccPolicy::Rotating)?;
    let cs_rows: Vec<usize> = cs_layout.interval_slots.iter().flat_map(|s| s.rows()).collect();
    let total = cs.wear().total_in_rows(cs_rows.iter().copied());
    let cs_max = cs.wear().max_in_rows(cs_rows.iter().copied()) as u64;
    let cells = cs_rows.len() as u64;
    let bound = total.div_ceil(cells) + 1;

    let fixed = fixed_layout(32, &hw).map_err(|e| e.to_string())?;
    let base = run(&fixed, AccPolicy::Fixed)?;
    let base_rows: Vec<usize> = fixed.positions.iter().flat_map(|s| s.rows()).collect();
    let base_max = base.wear().max_in_rows(base_rows) as u64;
    let ratio = base_max as f64 / cs_max as f64;

    let detail = format!(
        "CS max {cs_max} over {cells} interval cells (total {total}, bound {bound}); fixed max {base_max}; ratio {ratio:.2}x"
    );
    if cs_max > bound {
        return Err(format!("leveling bound violated: {detail}"));
    }
    if ratio < 32.0 {
        return Err(format!("baseline ratio below 32x: {detail}"));
    }
    Ok(detail)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("sense amplifier truth tables", truth_tables),
        ("vector add/sub arithmetic oracle", arithmetic_oracle),
        ("sparse dot product oracle and traces", sparse_dot_product),
        ("addition latency and critical path table", table_vii),
        ("32-bit vector addition ordering", ordering_32_bit),
        ("sparsity speedup and energy curve", sparsity_curve),
        ("mapping comparison on the example layer", table_vi),
        ("end-to-end bit exactness", end_to_end),
        ("wear leveling under rotation", wear_leveling),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
