fn main() {
    std::process::exit(kgr_service::cli::run(std::env::args_os()));
}
