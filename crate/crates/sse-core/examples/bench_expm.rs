use sse_core::algebra::c;
use sse_core::lindblad::{TwoLevelAtom, UnravelingSplit, SIDE};
use std::time::Instant;

fn main() {
    let k = 0.5f64.sqrt();
    let atom = TwoLevelAtom::resonance_fluorescence(0.0, 1.0, c(k, 0.0), c(k, 0.0), 1.0);
    let split = UnravelingSplit::counting(atom.model().unwrap(), SIDE).unwrap();
    let smooth = split.smooth(0.0);
    let start = Instant::now();
    let n = 200_000;
    let mut acc = 0.0;
    for i in 0..n {
        let p = smooth.expm(0.3 + (i % 7) as f64 * 0.1).unwrap();
        acc += p.matrix()[(0, 0)].re;
    }
    let dt = start.elapsed().as_secs_f64();
    println!("expm 4x4: {:.0} ns/call (acc {acc:.3})", dt / n as f64 * 1e9);

    let rho = sse_core::lindblad::ground();
    let v = rho.mat().vectorize();
    let start = Instant::now();
    let m = 20_000_000u64;
    let mut w = v.clone();
    for _ in 0..m {
        w = smooth.apply_vec(&w);
        let tr = w[0] + w[3];
        w[0] /= tr + c(1.0, 0.0);
    }
    let dt = start.elapsed().as_secs_f64();
    println!("matvec 4x4: {:.0} ns/call ({})", dt / m as f64 * 1e9, w[0]);
}
