#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/config.hpp"
#include "geoloc/pipeline.hpp"

namespace geoloc {

struct MetricsReport {
  ModelConfig config;
  std::vector<SplitMetrics> splits;
};

inline nlohmann::json to_json(const SplitMetrics& s) {
  nlohmann::json j = {{"split", s.split}, {"n", s.n}, {"loss", s.loss}};
  if (s.accuracy) j["accuracy"] = *s.accuracy;
  if (s.acc30) j["acc@30"] = *s.acc30;
  if (s.acc161) j["acc@161"] = *s.acc161;
  if (s.mean_error_miles) j["mean_error_miles"] = *s.mean_error_miles;
  if (s.accuracy) {
    j["unseen_labels"] = s.unseen_labels;
    nlohmann::json pc = nlohmann::json::array();
    for (const auto& c : s.per_class) {
      pc.push_back({{"label", c.label},
                    {"support", c.support},
                    {"predicted", c.predicted},
                    {"precision", c.precision},
                    {"recall", c.recall}});
    }
    j["per_class"] = pc;
  }
  if (!s.warnings.empty()) j["warnings"] = s.warnings;
  return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& s : r.splits) splits.push_back(to_json(s));
  return {{"variant", to_string(r.config.variant)}, {"task", to_string(r.config.task)}, {"config", to_json(r.config)},
          {"splits", splits}};
}

namespace detail {

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline std::vector<std::string> key_params(const ModelConfig& c) {
  std::vector<std::string> out;
  if (is_regression(c.variant)) {
    if (c.variant != Variant::cch_a) {
      std::string ks;
      for (std::size_t i = 0; i < c.kernels.size(); ++i) ks += (i ? "," : "") + std::to_string(c.kernels[i]);
      out.push_back("kernels: " + ks);
    } else {
      out.push_back("lstm: " + std::to_string(c.lstm_hidden));
    }
    out.push_back("fc layers: " + std::to_string(c.fc_layers));
    out.push_back("l-rate: " + fmt(c.lr, 4));
    return out;
  }
  out.push_back("encoders: " + std::to_string(c.encoders));
  out.push_back("emb-dim: " + std::to_string(c.emb_dim));
  out.push_back("div-fac: " + std::to_string(c.div_factor));
  out.push_back("drop-out: " + fmt(c.dropout, 2));
  if (c.variant == Variant::mh_u) {
    out.push_back("k-token: " + std::to_string(c.augment.k_tokens));
    out.push_back("time: " + fmt(c.augment.time_window_hours, 1) + " hours");
    out.push_back("frac: " + fmt(c.augment.sample_frac, 2));
  }
  if (c.variant == Variant::mh_c) {
    out.push_back("num-clus: " + std::to_string(c.augment.num_clusters));
    out.push_back("samples: " + std::to_string(c.augment.nc_samples));
  }
  if (c.sample_factor > 0.0) out.push_back("sam-fac: " + fmt(c.sample_factor, 2));
  return out;
}

}  // namespace detail

// Human-readable table: Model | Split | Acc. | Loss | Key-Params | Target.
// For coordinate models the accuracy column is acc@30 miles.
inline std::string report_to_table(const MetricsReport& r) {
  const std::vector<std::string> params = detail::key_params(r.config);
  const bool coords = r.config.task == Task::coords;
  std::ostringstream os;
  os << std::left << std::setw(14) << "Model" << std::setw(8) << "Split" << std::setw(12)
     << (coords ? "Acc@30mi" : "Acc.") << std::setw(10) << "Loss" << std::setw(26) << "Key-Params"
     << "Target\n";
  os << std::string(78, '-') << '\n';
  for (const auto& s : r.splits) {
    const double acc = coords ? s.acc30.value_or(0.0) : s.accuracy.value_or(0.0);
    for (std::size_t i = 0; i < std::max<std::size_t>(params.size(), 1); ++i) {
      if (i == 0) {
        os << std::setw(14) << to_string(r.config.variant) << std::setw(8) << s.split << std::setw(12)
           << (detail::fmt(100.0 * acc, 2) + "%") << std::setw(10) << detail::fmt(s.loss, 4);
      } else {
        os << std::setw(44) << "";
      }
      os << std::setw(26) << (i < params.size() ? params[i] : "") << (i == 0 ? to_string(r.config.task) : "") << '\n';
    }
    if (coords) {
      os << std::setw(44) << "" << "acc@161mi " << detail::fmt(100.0 * s.acc161.value_or(0.0), 2)
         << "%  mean error " << detail::fmt(s.mean_error_miles.value_or(0.0), 2) << " mi\n";
    }
    os << std::string(78, '-') << '\n';
  }
  return os.str();
}

}  // namespace geoloc
