fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(degen_control::cli::run(&args));
}
