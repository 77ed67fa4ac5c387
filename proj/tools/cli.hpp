#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "conr/gradcheck.hpp"
#include "conr/synthdata.hpp"

namespace conr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kSelfCheck = 3 };

/// Entry point of the `conr` tool; argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Runs `cases` and prints one PASS/FAIL line per op. kSelfCheck on any failure.
int gradcheck_report(const std::vector<GradCheckCase>& cases, int instances, double tolerance, std::uint64_t seed,
                     std::ostream& out);

// Dataset layout written by synth-data.
std::filesystem::path character_dir(const std::filesystem::path& data, std::uint64_t seed);
Split read_manifest(const std::filesystem::path& data);
/// Files of one character directory as an uncropped evaluation sample.
TrainingSample load_sample(const std::filesystem::path& dir);

}  // namespace conr::cli
