#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "eventmatch/displacement.hpp"
#include "eventmatch/pipeline.hpp"

namespace eventmatch::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kCheckFailed = 3 };

// Full command line including the program name. Output that a user asked for
// (reports, JSON) goes to `out`; diagnostics and warnings go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Canonical JSON of every setting that changes the output, and its FNV-1a hash.
std::string config_json(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);

// Binary P6 image: flow on the usual hue wheel (hue = direction, saturation =
// magnitude / max magnitude), disparity as grey levels scaled by the maximum.
std::string render_ppm(const DisplacementField& d);

}  // namespace eventmatch::cli
