use fosr::data::McmcConfig;
use fosr::sim::{generate_dataset, SimSettings};
fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let (n, p, iters) = (args[0], args[1], args[2]);
    let seed = args.get(3).copied().unwrap_or(1) as u64;
    let (data, _) = generate_dataset(&SimSettings { n, p, p1: 10.min(p), ..SimSettings::default() }, seed).unwrap();
    for fix in [false, true] {
        let cfg = McmcConfig { n_iter: iters, burn_in: iters / 2, thin: 1, seed: 3, fix_basis: fix, ..McmcConfig::default() };
        let t = std::time::Instant::now();
        let (_a, d) = fosr::gibbs::run_chain(&data, &cfg, 0, |_| {}).unwrap();
        println!("n={n} p={p} fix={fix}: {:.3}s per 1000 iters {:?}", t.elapsed().as_secs_f64() * 1000.0 / iters as f64, d);
    }
}
