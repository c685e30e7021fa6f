#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "jenkins/common.hpp"

namespace jenkins::cli {

/// Runs one subcommand; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

/// Leader trace CSV: header `x,y`, `x,y,z` (positions, one row per bin,
/// differentiated into velocities) or `vx,vy` (mm/s). '#' lines are comments.
VelocityMatrix read_leader_csv(const std::filesystem::path& path);

}  // namespace jenkins::cli
