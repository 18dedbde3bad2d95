#include "gmmloc/sweep.h"

#include <fstream>
#include <numeric>

#include <json.hpp>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

void summarize(SweepRow& row) {
  const auto n = static_cast<double>(row.ate.size());
  if (row.ate.empty()) return;
  row.mean_ate = std::accumulate(row.ate.begin(), row.ate.end(), 0.0) / n;
  if (row.ate.size() < 2) {
    row.variance = 0.0;
    row.variance_degenerate = true;
    return;
  }
  double ss = 0.0;
  for (double a : row.ate) ss += (a - row.mean_ate) * (a - row.mean_ate);
  row.variance = ss / (n - 1.0);
}

}  // namespace

std::vector<SweepRow> sigma_sweep(const SweepScenario& scenario, const std::vector<double>& sigmas,
                                  int runs, std::uint64_t base_seed, Alignment align) {
  if (runs < 1) throw ValidationError("sweep: runs must be >= 1");
  for (double s : sigmas) {
    if (!(s > 0.0)) throw ValidationError("sweep: sigma_str values must be positive");
  }
  const SyntheticScene scene = generate_scene(scenario.scene);

  std::vector<SweepRow> rows(sigmas.size() + 1);
  rows[0].baseline = true;
  for (std::size_t i = 0; i < sigmas.size(); ++i) rows[i + 1].sigma_str = sigmas[i];

  for (int r = 0; r < runs; ++r) {
    SequenceSpec spec = scenario.sequence;
    spec.seed = base_seed + static_cast<std::uint64_t>(r);
    const SequenceData data = to_sequence_data(scene, generate_sequence(scene, spec));
    for (SweepRow& row : rows) {
      row.seeds.push_back(spec.seed);
      PipelineConfig cfg = scenario.pipeline;
      cfg.structure_enabled = !row.baseline;
      if (!row.baseline) cfg.sigma_str = row.sigma_str;
      try {
        const RunResult run = run_sequence(data, cfg);
        row.ate.push_back(ate_rmse(run.estimate, data.gt, align).ate_rmse);
      } catch (const std::exception& e) {
        row.failures.push_back("seed " + std::to_string(spec.seed) + ": " + e.what());
      }
    }
  }
  for (SweepRow& row : rows) summarize(row);
  return rows;
}

void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& csv,
                 const std::filesystem::path& json) {
  std::ofstream c(csv);
  if (!c) throw std::runtime_error("cannot write " + csv.string());
  c << "sigma_str,baseline,runs,failures,mean_ate,variance,variance_degenerate\n";
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const SweepRow& r : rows) {
    c << (r.baseline ? std::string("") : format_double(r.sigma_str)) << ',' << (r.baseline ? 1 : 0)
      << ',' << r.ate.size() << ',' << r.failures.size() << ',' << format_double(r.mean_ate) << ','
      << format_double(r.variance) << ',' << (r.variance_degenerate ? 1 : 0) << '\n';
    nlohmann::ordered_json o;
    o["baseline"] = r.baseline;
    if (r.baseline) {
      o["sigma_str"] = nullptr;
    } else {
      o["sigma_str"] = r.sigma_str;
    }
    o["seeds"] = r.seeds;
    o["ate"] = r.ate;
    o["failures"] = r.failures;
    o["mean_ate"] = r.mean_ate;
    o["variance"] = r.variance;
    o["variance_degenerate"] = r.variance_degenerate;
    j.push_back(o);
  }
  std::ofstream o(json);
  if (!o) throw std::runtime_error("cannot write " + json.string());
  o << j.dump(2) << '\n';
}

}  // namespace gmmloc
