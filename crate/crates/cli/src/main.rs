fn main() {
    std::process::exit(bmec_ks_cli::run(std::env::args_os()));
}
