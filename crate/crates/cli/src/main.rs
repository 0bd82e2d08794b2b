use clap::Parser;
use uio_cli::{run, RunConfig};

fn main() {
    let cfg = RunConfig::parse();
    let code = match run(&cfg) {
        Ok(report) => {
            if cfg.opts.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report.json).expect("report serializes")
                );
            } else {
                print!("{}", report.text);
            }
            report.status
        }
        Err(e) => {
            if cfg.opts.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&e.to_json()).expect("error serializes")
                );
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    };
    std::process::exit(code);
}
