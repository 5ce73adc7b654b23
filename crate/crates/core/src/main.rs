fn main() {
    let code = hap_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
