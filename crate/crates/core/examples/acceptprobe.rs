use quadsqueeze::fockspace::HilbertConfig;
use quadsqueeze::measurement::*;

fn main() {
    let t0 = std::time::Instant::now();
    let params = ProtocolParams {
        phi: 0.159,
        steps: 500,
        initial: InitialState::Vacuum,
        seed: 0xF1_2026,
        hilbert: HilbertConfig::new(300).unwrap(),
    };
    let ens = ensemble_statistics(&params, 500).unwrap();
    let means = ens.final_means();
    let vars = ens.final_variances();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let sd = (means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let vmax = vars.iter().cloned().fold(0.0f64, f64::max);
    let pearson = ens.readout_correlation(50);
    println!("mean of final <I> = {mean:.5} (sd {sd:.4}, 3 sigma/sqrt(n) = {:.4})", 3.0 * sd / n.sqrt());
    println!("max final variance = {vmax:.5}");
    println!("pearson(last-50 readout, final <I>) = {pearson:.5}");
    println!("elapsed: {:.1?}", t0.elapsed());
}
