fn main() {
    std::process::exit(spikeglm::cli::run_command(std::env::args_os()));
}
