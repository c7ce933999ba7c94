use demandcast_core::farima::*;
use rand::SeedableRng;
use rand_distr::Distribution;

fn main() {
    let mut hits = 0;
    let trials = 40;
    for seed in 0..trials {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + seed);
        let series: Vec<f64> = (0..512).map(|_| {
            let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
            v
        }).collect();
        let sel = select_order(&series, 3).unwrap();
        if sel == (0, 0) { hits += 1; } else { println!("seed {seed}: {:?}", sel); }
    }
    println!("white noise -> (0,0): {hits}/{trials}");
}
