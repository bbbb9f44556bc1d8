#include "treehmc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace treehmc {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& text, int row, const std::string& col) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw IngestError("row " + std::to_string(row) + ", column '" + col +
                      "': non-numeric cell '" + text + "'");
  }
  return value;
}

}  // namespace

RawTable load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw IngestError(path + ": empty file");
  const auto header = split_line(line);
  if (header.empty()) throw IngestError(path + ": empty header row");

  int output_idx = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.output_column) output_idx = static_cast<int>(i);
  }
  if (output_idx < 0) {
    throw IngestError(path + ": missing output column '" +
                      schema.output_column + "'");
  }

  RawTable table;
  table.task = schema.task;
  table.cols = static_cast<int>(header.size()) - 1;
  if (table.cols < 1) throw IngestError(path + ": no input columns");
  for (size_t i = 0; i < header.size(); ++i) {
    if (static_cast<int>(i) != output_idx) table.input_names.push_back(header[i]);
  }

  std::map<std::string, int> label_ids;
  int row = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() ||
        line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const auto fields = split_line(line);
    if (fields.size() != header.size()) {
      throw IngestError("row " + std::to_string(row) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    for (size_t i = 0; i < fields.size(); ++i) {
      if (static_cast<int>(i) == output_idx) continue;
      table.inputs.push_back(parse_number(fields[i], row, header[i]));
    }
    const std::string& out_field = fields[static_cast<size_t>(output_idx)];
    if (schema.task == TaskKind::Regression) {
      table.reals.push_back(parse_number(out_field, row, header[output_idx]));
    } else {
      auto [it, inserted] =
          label_ids.emplace(out_field, static_cast<int>(label_ids.size()) + 1);
      if (inserted) table.class_names.push_back(out_field);
      table.labels.push_back(it->second);
    }
    ++table.rows;
  }
  if (table.rows == 0) throw IngestError(path + ": no data rows");
  table.num_classes = static_cast<int>(label_ids.size());
  return table;
}

Dataset normalize(const RawTable& train) {
  Dataset out;
  out.task = train.task;
  out.num_points = train.rows;
  out.num_inputs = train.cols;
  out.reals = train.reals;
  out.labels = train.labels;
  out.num_classes = train.num_classes;
  out.input_names = train.input_names;
  out.class_names = train.class_names;
  out.normalization.resize(static_cast<size_t>(train.cols));

  for (int d = 0; d < train.cols; ++d) {
    double lo = train.input(0, d);
    double hi = lo;
    for (int i = 1; i < train.rows; ++i) {
      lo = std::min(lo, train.input(i, d));
      hi = std::max(hi, train.input(i, d));
    }
    AffineMap& map = out.normalization[static_cast<size_t>(d)];
    if (hi > lo) {
      map.offset = lo;
      map.scale = hi - lo;
    } else {
      map.offset = lo;
      map.scale = 1.0;
      map.degenerate = true;
    }
  }

  out.inputs.resize(train.inputs.size());
  for (int i = 0; i < train.rows; ++i) {
    for (int d = 0; d < train.cols; ++d) {
      out.inputs[static_cast<size_t>(i) * train.cols + d] =
          out.normalization[static_cast<size_t>(d)].normalize(
              train.input(i, d));
    }
  }
  return out;
}

Dataset apply_normalization(const RawTable& table, const Dataset& reference) {
  if (table.cols != reference.num_inputs) {
    throw IngestError("input dimension mismatch when applying normalization");
  }
  Dataset out;
  out.task = table.task;
  out.num_points = table.rows;
  out.num_inputs = table.cols;
  out.reals = table.reals;
  out.labels = table.labels;
  out.num_classes = std::max(table.num_classes, reference.num_classes);
  out.input_names = table.input_names;
  out.class_names = reference.class_names;
  out.normalization = reference.normalization;
  out.inputs.resize(table.inputs.size());
  for (int i = 0; i < table.rows; ++i) {
    for (int d = 0; d < table.cols; ++d) {
      out.inputs[static_cast<size_t>(i) * table.cols + d] =
          out.normalization[static_cast<size_t>(d)].normalize(
              table.input(i, d));
    }
  }
  return out;
}

double synth_cgm_mean(double x0, double x1) {
  if (x1 < 4.0) {
    if (x0 < 3.0) return 1.0;
    return x0 < 7.0 ? 5.0 : 8.0;
  }
  return x0 < 5.0 ? 8.0 : 2.0;
}

namespace {

RawTable synth_cgm_table(int n, const SynthCgmConfig& cfg, Rng& rng) {
  RawTable t;
  t.task = TaskKind::Regression;
  t.rows = n;
  t.cols = 2;
  t.input_names = {"x0", "x1"};
  t.inputs.reserve(static_cast<size_t>(n) * 2);
  t.reals.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x0 = rng.uniform(cfg.domain_lo, cfg.domain_hi);
    const double x1 = rng.uniform(cfg.domain_lo, cfg.domain_hi);
    t.inputs.push_back(x0);
    t.inputs.push_back(x1);
    t.reals.push_back(synth_cgm_mean(x0, x1) + cfg.sigma * rng.normal());
  }
  return t;
}

}  // namespace

std::pair<RawTable, RawTable> synth_cgm(const SynthCgmConfig& cfg, Rng& rng) {
  if (cfg.n_train < 1 || cfg.n_test < 1) {
    throw ConfigError("synthetic generator needs at least one row per side");
  }
  if (!(cfg.sigma > 0.0)) {
    // sigma == 0 handled as the noiseless limit
    if (cfg.sigma < 0.0) throw ConfigError("sigma must be non-negative");
  }
  RawTable train = synth_cgm_table(cfg.n_train, cfg, rng);
  RawTable test = synth_cgm_table(cfg.n_test, cfg, rng);
  return {std::move(train), std::move(test)};
}

std::pair<RawTable, RawTable> split(const RawTable& table, double fraction,
                                    Rng& rng) {
  if (!(fraction > 0.0) || !(fraction < 1.0)) {
    throw ConfigError("split fraction must be in (0,1)");
  }
  const int n_train = static_cast<int>(std::round(table.rows * fraction));
  if (n_train < 1 || n_train >= table.rows) {
    throw ConfigError("split fraction leaves an empty side");
  }
  std::vector<int> order(static_cast<size_t>(table.rows));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  auto take = [&](int begin, int end) {
    RawTable part;
    part.task = table.task;
    part.cols = table.cols;
    part.rows = end - begin;
    part.num_classes = table.num_classes;
    part.input_names = table.input_names;
    part.class_names = table.class_names;
    for (int r = begin; r < end; ++r) {
      const int i = order[static_cast<size_t>(r)];
      for (int d = 0; d < table.cols; ++d) {
        part.inputs.push_back(table.input(i, d));
      }
      if (table.task == TaskKind::Regression) {
        part.reals.push_back(table.reals[static_cast<size_t>(i)]);
      } else {
        part.labels.push_back(table.labels[static_cast<size_t>(i)]);
      }
    }
    return part;
  };
  return {take(0, n_train), take(n_train, table.rows)};
}

void write_csv(const RawTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path);
  out.precision(17);
  for (int d = 0; d < table.cols; ++d) {
    out << (d ? "," : "")
        << (d < static_cast<int>(table.input_names.size())
                ? table.input_names[static_cast<size_t>(d)]
                : "x" + std::to_string(d));
  }
  out << ",y\n";
  for (int i = 0; i < table.rows; ++i) {
    for (int d = 0; d < table.cols; ++d) {
      out << (d ? "," : "") << table.input(i, d);
    }
    if (table.task == TaskKind::Regression) {
      out << "," << table.reals[static_cast<size_t>(i)];
    } else {
      const int label = table.labels[static_cast<size_t>(i)];
      if (!table.class_names.empty()) {
        out << "," << table.class_names[static_cast<size_t>(label - 1)];
      } else {
        out << "," << label;
      }
    }
    out << "\n";
  }
}

}  // namespace treehmc
