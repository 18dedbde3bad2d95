#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gmmloc/pipeline.h"
#include "gmmloc/simulator.h"

namespace gmmloc {

// Everything needed to reproduce a run. Stored as JSON; missing keys keep
// their defaults, unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  SceneSpec scene;
  SequenceSpec sequence;
  PipelineConfig pipeline;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2 };

// Entry point of the gmmloc tool; args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace gmmloc
