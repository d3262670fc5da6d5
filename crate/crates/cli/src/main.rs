fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(s3t_cli::run(&argv));
}
