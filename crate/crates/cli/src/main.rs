fn main() {
    std::process::exit(growth_spde_cli::run(std::env::args_os()));
}
