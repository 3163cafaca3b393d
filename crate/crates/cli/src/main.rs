fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(stochloc_cli::run(argv));
}
