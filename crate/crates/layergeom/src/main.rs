// SPDX-License-Identifier: MIT OR Apache-2.0

use clap::Parser;
use layergeom::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(Cli::parse()));
}
