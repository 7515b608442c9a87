//! Wall-clock timing of SCSA forward passes next to the FLOP model.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scsa_core::{flop_estimate, preset, Error, Mode, ParamStore, Result, Scsa, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchPoint {
    pub preset: String,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    /// Images per timed forward pass.
    pub batch: usize,
    pub warmups: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { batch: 8, warmups: 2, reps: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub point: BenchPoint,
    /// Median over `reps` of one batched forward pass.
    pub median_ms: f64,
    /// Model MACs for the whole batch.
    pub flops: u64,
}

pub const CSV_HEADER: &str = "preset,C,H,W,median_ms,flops";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let p = &r.point;
        s.push_str(&format!("{},{},{},{},{:.4},{}\n", p.preset, p.c, p.h, p.w, r.median_ms, r.flops));
    }
    s
}

/// Parses `"C=16;HW=28,56,112"` (square maps) or `"C=16,32;H=28;W=14,28"`
/// into the cartesian product of the listed extents.
pub fn parse_sweep(spec: &str) -> Result<Vec<(usize, usize, usize)>> {
    let mut cs = Vec::new();
    let mut hs = Vec::new();
    let mut ws = Vec::new();
    let mut square = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, vals) = part.split_once('=').ok_or_else(|| Error::Config(format!("sweep term {part:?} lacks '='")))?;
        let vals = vals
            .split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|e| Error::Config(format!("sweep {key}: {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.contains(&0) {
            return Err(Error::Config(format!("sweep {key}: extents must be positive")));
        }
        match key.trim() {
            "C" => cs = vals,
            "H" => hs = vals,
            "W" => ws = vals,
            "HW" => square = vals,
            other => return Err(Error::Config(format!("unknown sweep key {other:?}; expected C, H, W or HW"))),
        }
    }
    if cs.is_empty() {
        return Err(Error::Config("sweep needs C=...".into()));
    }
    let mut out = Vec::new();
    for &c in &cs {
        if !square.is_empty() {
            out.extend(square.iter().map(|&s| (c, s, s)));
        }
        for &h in &hs {
            for &w in &ws {
                out.push((c, h, w));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("sweep needs HW=... or both H=... and W=...".into()));
    }
    Ok(out)
}

pub fn sweep_points(preset_name: &str, extents: &[(usize, usize, usize)]) -> Vec<BenchPoint> {
    extents.iter().map(|&(c, h, w)| BenchPoint { preset: preset_name.to_string(), c, h, w }).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times each point in isolation, one after another.
pub fn bench(points: &[BenchPoint], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if opts.reps == 0 || opts.batch == 0 {
        return Err(Error::Config("bench needs reps >= 1 and batch >= 1".into()));
    }
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let cfg = preset(&p.preset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut store = ParamStore::new();
        let module = Scsa::new(&mut store, "scsa", p.c, &cfg, &mut rng)?;
        let x = Tensor::uniform(&[opts.batch, p.c, p.h, p.w], -1.0, 1.0, &mut rng)?;
        let once = || -> Result<f64> {
            let start = Instant::now();
            let mut tape = Tape::with_mode(Mode::Eval);
            let xv = tape.leaf(x.clone());
            let y = module.forward(&mut tape, &store, xv)?;
            std::hint::black_box(tape.value(y));
            Ok(start.elapsed().as_secs_f64() * 1e3)
        };
        for _ in 0..opts.warmups {
            once()?;
        }
        let times = (0..opts.reps).map(|_| once()).collect::<Result<Vec<_>>>()?;
        let flops = flop_estimate(p.c, p.h, p.w, &cfg).total * opts.batch as u64;
        rows.push(BenchRow { point: p.clone(), median_ms: median(times), flops });
    }
    Ok(rows)
}
