fn main() {
    std::process::exit(dhd_sim::run::run_command(std::env::args_os()));
}
