use clap::Parser;
use latent_hmc_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = latent_hmc_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
