//! The command-line pipeline driven from code: synthesize a corpus, then
//! score, fit, bundle and export it.

use clap::Parser;
use hubfair::cli::{run, Cli};

fn main() -> hubfair::Result<()> {
    let dir = std::env::temp_dir().join(format!("hubfair-e2e-{}", std::process::id()));
    let data = dir.join("corpus");
    let cfg = data.join("hubfair.toml");
    let (d, c) = (data.display().to_string(), cfg.display().to_string());
    let steps: [&[&str]; 5] = [
        &["hubfair", "synth", "--out", &d, "--seed", "3"],
        &["hubfair", "score", "--config", &c],
        &["hubfair", "fit", "--config", &c, "--specs", "GLM-1,GLM-2,GLM-1a"],
        &["hubfair", "bundle", "--config", &c],
        &["hubfair", "serve-export", "--config", &c],
    ];
    let mut stdout = std::io::stdout();
    for args in steps {
        println!("$ {}", args.join(" "));
        let cli = Cli::try_parse_from(args).map_err(|e| hubfair::Error::Config(e.to_string()))?;
        run(&cli, &mut stdout)?;
    }
    println!("artifacts under {}", data.join("out").display());
    Ok(())
}
