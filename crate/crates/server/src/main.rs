fn main() {
    std::process::exit(kgmem_server::cli::run(std::env::args_os()));
}
