fn main() {
    std::process::exit(sap_cli::run(std::env::args_os()));
}
