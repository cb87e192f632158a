use clap::Parser;
use embedded_jc::cli;

fn main() {
    let args = cli::Cli::parse();
    match cli::run(args) {
        Ok(summary) => println!("{summary}"),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
