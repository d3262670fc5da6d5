//! Command-line pipeline driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or file
//! format error, 4 numeric or training failure.

mod args;
mod commands;

use s3t_core::Error;

const USAGE: &str = "s3t — EEG decoding pipeline (CSP + attention classifier)

Usage: s3t <command> [--flag value ...]

Commands:
  synth       Generate a synthetic trial set
                --out FILE [--classes 4] [--trials-per-class 40] [--channels 8]
                [--samples 1000] [--fs 250] [--freqs f1,f2,...] [--noise 0.7]
                [--std-high 2.2] [--std-low 0.5] [--mixing identity|SEED] [--seed 42]
  preprocess  Band-pass, optionally re-window, and z-score a trial set
                --in FILE --out FILE [--band 4:40|none] [--window 2:6]
                [--stats-out FILE]
  fit-csp     Fit the one-versus-rest CSP spatial filter
                --in FILE --out FILE --rows S [--classes N]
  train       Train a model on filtered trials
                --in FILE --csp FILE --out CKPT [model flags] [train flags]
  eval        Score a checkpoint on a trial set
                --in FILE --csp FILE --ckpt FILE [--out REPORT]
  cv          End-to-end stratified k-fold cross-validation
                --in FILE [--band 4:40|none] [--rows 2] [--classes N]
                [model flags] [train flags] [--out REPORT]
  ablate      Cross-validate full vs stage-dropped model
                --drop spatial|temporal|posenc|ff + cv flags
                [--out REPORT] [--out-full REPORT]
  sweep       Cross-validate over a hyperparameter grid
                --param slice_d|kc --values 5,10,20 + cv flags [--out CSV]
  params      Print the trainable parameter count
                [--channels 16] [--samples 1000] [--classes 4] [model flags]
                or --ckpt FILE

Model flags: --slice 10 --heads 5 --kc 51 --nf 4 --na 3 --dk h*slice --dv h*slice
             --dropout-spatial 0.3 --dropout-temporal 0.5 --drop none
Train flags: --lr 2e-4 --beta1 0.5 --beta2 0.9 --batch 50 --epochs 500
             --seed 0 --folds 10
";

/// Run the CLI on `argv` (including the program name). Returns the exit code.
pub fn run(argv: &[String]) -> i32 {
    let Some(command) = argv.get(1) else {
        eprint!("{USAGE}");
        return 2;
    };
    if command == "--help" || command == "help" || command == "-h" {
        print!("{USAGE}");
        return 0;
    }
    let parsed = match args::Args::parse(&argv[2..]) {
        Ok(parsed) => parsed,
        Err(err) => return fail(&err),
    };
    let result = match command.as_str() {
        "synth" => commands::cmd_synth(parsed),
        "preprocess" => commands::cmd_preprocess(parsed),
        "fit-csp" => commands::cmd_fit_csp(parsed),
        "train" => commands::cmd_train(parsed),
        "eval" => commands::cmd_eval(parsed),
        "cv" => commands::cmd_cv(parsed),
        "ablate" => commands::cmd_ablate(parsed),
        "sweep" => commands::cmd_sweep(parsed),
        "params" => commands::cmd_params(parsed),
        other => {
            eprintln!("unknown command `{other}`\n");
            eprint!("{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(()) => 0,
        Err(err) => fail(&err),
    }
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code(err)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::Numeric(_) | Error::Train(_) => 4,
        _ => 3,
    }
}
