use std::process::Command;

use clap::CommandFactory;
use demokit_cli::Cli;

#[test]
fn every_argument_has_help_text() {
    let mut root = Cli::command();
    root.build();
    let mut missing = Vec::new();
    for arg in root.get_arguments() {
        if arg.get_help().is_none() && !matches!(arg.get_id().as_str(), "help" | "version") {
            missing.push(format!("demokit {}", arg.get_id()));
        }
    }
    for sub in root.get_subcommands() {
        if sub.get_about().is_none() {
            missing.push(format!("{} (about)", sub.get_name()));
        }
        for arg in sub.get_arguments() {
            if arg.get_help().is_none() && arg.get_id() != "help" {
                missing.push(format!("{} {}", sub.get_name(), arg.get_id()));
            }
        }
    }
    assert!(missing.is_empty(), "undocumented: {missing:?}");
}

#[test]
fn subcommand_help_lists_every_flag() {
    let root = Cli::command();
    for sub in root.get_subcommands() {
        let out = Command::new(env!("CARGO_BIN_EXE_demokit"))
            .args([sub.get_name(), "--help"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", sub.get_name());
        let text = String::from_utf8(out.stdout).unwrap();
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(text.contains(&format!("--{long}")), "{} --help lacks --{long}", sub.get_name());
            }
        }
    }
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [vec!["frobnicate"], vec!["eval", "--no-such-flag"], vec![]] {
        let out = Command::new(env!("CARGO_BIN_EXE_demokit")).args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_demokit")).arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
