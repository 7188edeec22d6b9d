#include "dephn/reports.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dephn/metrics.hpp"

namespace dephn::harness {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

std::string prefix(const ArtifactTag& tag) { return tag.config_hash + "," + std::to_string(tag.seed) + ","; }

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

double mean_abs(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::vector<TaskMetrics> evaluate_predictions(const Predictions& predictions, const data::LabeledDataset& ds) {
  std::vector<TaskMetrics> out;
  for (std::size_t t = 0; t < predictions.probabilities.size(); ++t) {
    TaskMetrics m;
    m.task = t;
    m.logloss = metrics::logloss(predictions.probabilities[t], ds.labels.at(t));
    try {
      m.auc = metrics::auc(predictions.probabilities[t], ds.labels[t]);
    } catch (const metrics::SingleClassError& e) {
      m.auc_error = "task " + std::to_string(t) + ": " + e.what();
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const ArtifactTag& tag, std::string_view model,
                       const std::vector<TaskMetrics>& metrics) {
  auto os = open_csv(path);
  os << "config_hash,seed,model,task,logloss,auc,auc_status\n";
  for (const auto& m : metrics) {
    os << prefix(tag) << model << ',' << m.task << ',' << format_double(m.logloss) << ','
       << (m.auc ? format_double(*m.auc) : "") << ',' << (m.auc ? "ok" : csv_safe(m.auc_error)) << '\n';
  }
}

void write_gate_csv(const std::filesystem::path& path, const ArtifactTag& tag, const model::MultiTaskModel& m,
                    const Tensor& gate_mean) {
  auto os = open_csv(path);
  os << "config_hash,seed,gating,task,expert,mapping,gate_value\n";
  const model::GateTable* table = m.gate_table();
  const model::MappingSet* maps = m.mapping_set();
  if (table == nullptr || maps == nullptr || gate_mean.size() == 0) return;
  for (std::size_t t = 0; t < table->tasks(); ++t) {
    for (std::size_t k = 0; k < table->experts(); ++k) {
      for (std::size_t p = 0; p < table->mappings(); ++p) {
        os << prefix(tag) << model::gating_mode_name(table->mode()) << ',' << t << ',' << k << ','
           << model::mapping_name((*maps)[p]) << ','
           << format_double(gate_mean[(t * table->experts() + k) * table->mappings() + p]) << '\n';
      }
    }
  }
}

void write_ssg_csv(const std::filesystem::path& path, const ArtifactTag& tag, const ad::ParameterStore& store,
                   const features::FieldSchema& schema) {
  auto os = open_csv(path);
  os << "config_hash,seed,branch,field,coordinate,gate_value\n";
  for (auto b : features::kBranches) {
    const std::string name = features::ssg_parameter_name(b);
    if (!store.contains(name)) continue;
    const Tensor& raw = store.value(name);
    const bool per_field = raw.rank() == 2 && raw.dim(1) == 1 && schema.embed_dim != 1;
    for (std::size_t f = 0; f < schema.field_count(); ++f) {
      for (std::size_t d = 0; d < schema.embed_dim; ++d) {
        const double r = per_field ? raw[f] : raw[f * schema.embed_dim + d];
        os << prefix(tag) << features::branch_name(b) << ',' << f << ',' << d << ','
           << format_double(1.0 / (1.0 + std::exp(-r))) << '\n';
      }
    }
  }
}

void write_activation_csv(const std::filesystem::path& path, const ArtifactTag& tag, const Predictions& predictions) {
  auto os = open_csv(path);
  os << "config_hash,seed,task,mean_abs_public,mean_abs_private,public_share\n";
  for (std::size_t t = 0; t < predictions.logit_pub.size(); ++t) {
    const double pub = mean_abs(predictions.logit_pub[t]);
    const double pri = mean_abs(predictions.logit_pri[t]);
    const double share = pub + pri == 0.0 ? 0.5 : pub / (pub + pri);
    os << prefix(tag) << t << ',' << format_double(pub) << ',' << format_double(pri) << ',' << format_double(share)
       << '\n';
  }
}

void write_loss_curve_csv(const std::filesystem::path& path, const ArtifactTag& tag, std::string_view gating,
                          const std::vector<std::vector<double>>& train_loss,
                          const std::vector<std::vector<double>>& validation_loss) {
  auto os = open_csv(path);
  os << "config_hash,seed,gating,epoch,task,train_logloss,validation_logloss\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e) {
    for (std::size_t t = 0; t < train_loss[e].size(); ++t) {
      os << prefix(tag) << gating << ',' << e + 1 << ',' << t << ',' << format_double(train_loss[e][t]) << ','
         << format_double(validation_loss.at(e).at(t)) << '\n';
    }
  }
}

void write_scatter_csv(const std::filesystem::path& path, const ArtifactTag& tag, const data::LabeledDataset& ds,
                       const Predictions& predictions) {
  auto os = open_csv(path);
  const std::size_t tasks = predictions.logit_pub.size();
  os << "config_hash,seed,row";
  for (std::size_t t = 0; t < tasks; ++t) os << ",confidence" << t;
  for (std::size_t t = 0; t < tasks; ++t) os << ",logit" << t;
  os << '\n';
  for (std::size_t r = 0; r < ds.rows; ++r) {
    os << prefix(tag) << r;
    for (std::size_t t = 0; t < tasks; ++t) {
      os << ',';
      if (t < ds.confidences.size()) os << format_double(ds.confidences[t][r]);
    }
    for (std::size_t t = 0; t < tasks; ++t) {
      os << ',' << format_double(predictions.logit_pub[t][r] + predictions.logit_pri[t][r]);
    }
    os << '\n';
  }
}

void write_timing_csv(const std::filesystem::path& path, const ArtifactTag& tag, double train_seconds) {
  auto os = open_csv(path);
  os << "config_hash,seed,train_seconds\n" << prefix(tag) << format_double(train_seconds) << '\n';
}

std::string summarize_runs(const std::vector<std::filesystem::path>& run_dirs) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-32s %-16s %-6s %-5s %-10s %-10s\n", "run", "config_hash", "model", "task",
                "logloss", "auc");
  out << line;
  for (const auto& dir : run_dirs) {
    const auto path = dir / "metrics.csv";
    std::ifstream is(path);
    if (!is) throw std::runtime_error("missing metrics file " + path.string());
    std::string row;
    std::getline(is, row);
    while (std::getline(is, row)) {
      if (row.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(row);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      cells.resize(7);
      auto fixed = [](const std::string& cell) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", std::stod(cell));
        return std::string(buf);
      };
      const std::string ll = cells[4].empty() ? "" : fixed(cells[4]);
      const std::string auc = cells[5].empty() ? "n/a" : fixed(cells[5]);
      auto name = dir.filename();
      if (name.empty()) name = dir.parent_path().filename();
      std::snprintf(line, sizeof line, "%-32s %-16s %-6s %-5s %-10s %-10s\n", name.string().c_str(),
                    cells[0].c_str(), cells[2].c_str(), cells[3].c_str(), ll.c_str(), auc.c_str());
      out << line;
    }
  }
  return out.str();
}

}  // namespace dephn::harness
