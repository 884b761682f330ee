#pragma once

#include <iosfwd>

namespace ptychoforge::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;         // bad flags or configuration
inline constexpr int kExitMissingInput = 2;  // an input file does not exist
inline constexpr int kExitFailure = 3;       // malformed artifact or non-finite metric

/// `ptychoforge <simulate|epie|dataset|train|predict|stitch|sweep|bench> --config <path>
/// [--seed N] [--deterministic] [--out DIR]`. Each stage reads its inputs from
/// and writes its outputs to the output directory, plus manifest_<stage>.json.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ptychoforge::cli
