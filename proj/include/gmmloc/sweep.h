#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gmmloc/evaluation.h"
#include "gmmloc/pipeline.h"
#include "gmmloc/simulator.h"

namespace gmmloc {

struct SweepScenario {
  SceneSpec scene;
  SequenceSpec sequence;
  PipelineConfig pipeline;
};

struct SweepRow {
  bool baseline = false;  // structure disabled
  double sigma_str = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> ate;  // successful runs, seed order
  std::vector<std::string> failures;
  double mean_ate = 0.0;
  double variance = 0.0;  // unbiased; 0 with a single run
  bool variance_degenerate = false;
};

// One scene; run r uses sequence seed base_seed + r for every row, so rows
// are paired. The first row is the structure-disabled baseline.
std::vector<SweepRow> sigma_sweep(const SweepScenario& scenario, const std::vector<double>& sigmas,
                                  int runs, std::uint64_t base_seed,
                                  Alignment align = Alignment::Rigid);

void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& csv,
                 const std::filesystem::path& json);

}  // namespace gmmloc
