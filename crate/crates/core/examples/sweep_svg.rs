//! Sweep the batch size through the CLI layer and write CSV plus SVG.
use tailscope::cli::commands::sweep;
use tailscope::cli::config::ExperimentConfig;
use tailscope::cli::report::render_csv;
use tailscope::cli::svg::svg_from_csv;

const CONFIG: &str = "\
[schedule]
variant = constant, cyclic, markov
eta_hat = 0.5
range = 0.1
k = 4
p = 0.6
[sweep]
parameter = b
values = 2, 4, 6, 8, 10
[compute]
seed = 17
n_samples = 100000
";

fn main() -> tailscope::Result<()> {
    let cfg = ExperimentConfig::parse(CONFIG, None)?;
    let report = sweep(&cfg)?;
    let csv = render_csv(&report.rows, None);
    print!("{csv}");
    let path = std::env::temp_dir().join("tailscope_sweep.svg");
    std::fs::write(&path, svg_from_csv(&csv, "batch size")?)?;
    println!("chart written to {}", path.display());
    Ok(())
}
