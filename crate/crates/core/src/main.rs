fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(acf_core::cli::run(&argv));
}
