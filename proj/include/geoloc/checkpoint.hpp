#pragma once

#include <algorithm>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/config.hpp"
#include "geoloc/error.hpp"
#include "geoloc/pipeline.hpp"

// Checkpoints are single JSON documents; see docs/checkpoint.md.
namespace geoloc {

inline constexpr const char* kCheckpointFormat = "geoloc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json history_to_json(const std::vector<HistoryEntry>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& h : history) arr.push_back({{"epoch", h.epoch}, {"split", h.split}, {"metric", h.metric}, {"value", h.value}});
  return arr;
}

inline nlohmann::json checkpoint_to_json(const TrainedModel& m) {
  nlohmann::json params = nlohmann::json::array();
  const ParameterStore& store = m.model().params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    params.push_back({{"name", store[i].name}, {"shape", store[i].value.shape()}, {"values", store[i].value.values()}});
  }
  std::vector<std::string> stop(m.stopwords().begin(), m.stopwords().end());
  std::sort(stop.begin(), stop.end());
  const NormStats& n = m.norm();
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", to_json(m.config())},
          {"vocab", m.vocab().to_json()},
          {"labels", m.labels()},
          {"normalization", {{"lon_mean", n.lon_mean}, {"lon_std", n.lon_std}, {"lat_mean", n.lat_mean}, {"lat_std", n.lat_std}}},
          {"stopwords", stop},
          {"parameters", params},
          {"user_dict", m.user_dict ? m.user_dict->to_json() : nlohmann::json(nullptr)},
          {"cluster_index", m.cluster_index ? m.cluster_index->to_json() : nlohmann::json(nullptr)},
          {"history", history_to_json(m.history)}};
}

inline TrainedModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw Error("not a geoloc checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg = model_config_from_json(j.at("config"));
    const auto& nj = j.at("normalization");
    NormStats norm{nj.at("lon_mean").get<double>(), nj.at("lon_std").get<double>(), nj.at("lat_mean").get<double>(),
                   nj.at("lat_std").get<double>()};
    auto stop = std::make_shared<StopwordSet>();
    for (const auto& w : j.at("stopwords")) stop->insert(w.get<std::string>());
    TrainedModel m(cfg, Vocab::from_json(j.at("vocab")), j.at("labels").get<std::vector<std::string>>(), norm, stop);
    ParameterStore& store = m.model().params();
    const auto& params = j.at("parameters");
    if (params.size() != store.size()) throw Error("parameter count does not match the configured architecture");
    for (const auto& p : params) {
      Parameter& dst = store.at(p.at("name").get<std::string>());
      const Shape shape = p.at("shape").get<Shape>();
      if (shape != dst.value.shape()) {
        throw Error("parameter " + dst.name + " has shape " + shape_str(shape) + ", expected " + shape_str(dst.value.shape()));
      }
      dst.value = Tensor(shape, p.at("values").get<std::vector<double>>());
    }
    if (!j.at("user_dict").is_null()) m.user_dict = UserDict::from_json(j["user_dict"]);
    if (!j.at("cluster_index").is_null()) m.cluster_index = ClusterIndex::from_json(j["cluster_index"]);
    for (const auto& h : j.at("history")) {
      m.history.push_back({h.at("epoch").get<std::size_t>(), h.at("split").get<std::string>(),
                           h.at("metric").get<std::string>(), h.at("value").get<double>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const TrainedModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << checkpoint_to_json(m).dump() << '\n';
  if (!out) throw Error("failed writing checkpoint " + path);
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace geoloc
