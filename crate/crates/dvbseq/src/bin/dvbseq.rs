fn main() {
    if let Err(err) = dvbseq::cli::run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
