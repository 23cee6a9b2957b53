//! Drives the command-line front end in-process to regenerate a figure preset.

fn main() -> std::process::ExitCode {
    let dir = std::env::temp_dir().join("amdi-qcka-example");
    let out = dir.join("fig3.csv");
    let out = out.to_string_lossy();
    let code = amdi_qcka::cli::run(["amdi-qcka", "scan", "--fig", "3a", "--distance-km", "0:300:50", "--out", &out]);
    println!("wrote {}/fig3_n3.csv and fig3_n4.csv with manifests", dir.display());
    code
}
