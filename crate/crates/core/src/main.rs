fn main() {
    std::process::exit(dephasing_ep::cli::main_entry());
}
