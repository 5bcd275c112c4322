fn main() {
    std::process::exit(sslmem::cli::run_command(std::env::args_os()));
}
