#ifndef TREEHMC_DATA_HPP
#define TREEHMC_DATA_HPP

#include <optional>
#include <string>
#include <vector>

#include "treehmc/errors.hpp"
#include "treehmc/random.hpp"

namespace treehmc {

enum class TaskKind { Classification, Regression };

// Per-dimension affine map: normalized = (raw - offset) / scale.
struct AffineMap {
  double offset = 0.0;
  double scale = 1.0;
  bool degenerate = false;  // constant column, pinned to 0.5

  double normalize(double raw) const {
    return degenerate ? 0.5 : (raw - offset) / scale;
  }
  double denormalize(double norm) const {
    return degenerate ? offset : offset + scale * norm;
  }
};

// Unnormalized rows straight from a CSV or a generator.
struct RawTable {
  TaskKind task = TaskKind::Regression;
  int rows = 0;
  int cols = 0;                     // input dimensions
  std::vector<double> inputs;       // row-major rows x cols
  std::vector<double> reals;        // regression outputs
  std::vector<int> labels;          // classification outputs, 1..M
  int num_classes = 0;
  std::vector<std::string> input_names;
  std::vector<std::string> class_names;  // index m-1 holds the name of class m

  double input(int i, int d) const {
    return inputs[static_cast<size_t>(i) * cols + d];
  }
};

// Inputs normalized to the unit interval, plus the maps used to get there.
struct Dataset {
  TaskKind task = TaskKind::Regression;
  int num_points = 0;
  int num_inputs = 0;
  std::vector<double> inputs;  // row-major, normalized
  std::vector<double> reals;
  std::vector<int> labels;  // 1..M
  int num_classes = 0;
  std::vector<AffineMap> normalization;
  std::vector<std::string> input_names;
  std::vector<std::string> class_names;

  double input(int i, int d) const {
    return inputs[static_cast<size_t>(i) * num_inputs + d];
  }
};

struct CsvSchema {
  std::string output_column;  // name of the output column (header required)
  TaskKind task = TaskKind::Regression;
};

// Parses a comma-separated file (header row, '.' decimals, UTF-8). Errors
// carry row/column locations. Classification labels are relabelled to the
// contiguous range 1..M in order of first appearance.
RawTable load_csv(const std::string& path, const CsvSchema& schema);

// Fits min-max maps on `train` and applies them; a constant column maps to
// 0.5 and is flagged.
Dataset normalize(const RawTable& train);
// Applies an already-fitted normalization (values may land outside [0,1]).
Dataset apply_normalization(const RawTable& table, const Dataset& reference);

// Synthetic regression data routed through a fixed two-input tree:
// dim-1 < 4 branches left to {dim-0 < 3 -> 1, else dim-0 < 7 -> 5 else 8},
// right to {dim-0 < 5 -> 8, else 2}; outputs add Normal(0, sigma^2) noise.
// Inputs are uniform over `domain_lo`..`domain_hi` squared.
struct SynthCgmConfig {
  int n_train = 800;
  int n_test = 800;
  double sigma = 0.2;
  double domain_lo = 0.0;
  double domain_hi = 10.0;
};

std::pair<RawTable, RawTable> synth_cgm(const SynthCgmConfig& cfg, Rng& rng);

// Noiseless routed mean of the synthetic generator for one raw point.
double synth_cgm_mean(double x0, double x1);

// Disjoint shuffled partition of the rows; (train, test) raw tables.
std::pair<RawTable, RawTable> split(const RawTable& table, double fraction,
                                    Rng& rng);

void write_csv(const RawTable& table, const std::string& path);

}  // namespace treehmc

#endif  // TREEHMC_DATA_HPP
