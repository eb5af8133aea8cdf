#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adnn/discovery.hpp"
#include "adnn/error.hpp"
#include "adnn/neural.hpp"

namespace adnn::io {

using nlohmann::json;

inline constexpr const char* kModelFormat = "adnn-factor-model";
inline constexpr int kModelVersion = 1;

namespace detail {

// NaN travels as null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double num(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json matrix_json(const nn::Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline nn::Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw UserError("model file: matrix data does not match its shape");
  }
  nn::Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace detail

inline json config_json(const nn::MlpConfig& c) {
  return {{"layer_count", c.layer_count}, {"width", c.width},
          {"activation", nn::activation_name(c.activation)},
          {"dropout_rate", c.dropout_rate}, {"l2_coeff", c.l2_coeff},
          {"input_size", c.input_size}, {"output_size", c.output_size}};
}

inline nn::MlpConfig config_from(const json& j) {
  nn::MlpConfig c;
  c.layer_count = j.at("layer_count").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.activation = nn::parse_activation(j.at("activation").get<std::string>());
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.l2_coeff = j.at("l2_coeff").get<double>();
  c.input_size = j.at("input_size").get<std::size_t>();
  c.output_size = j.at("output_size").get<std::size_t>();
  c.validate();
  return c;
}

inline json model_json(const discovery::FactorModel& m) {
  json layers = json::array();
  for (std::size_t l = 0; l < m.params.layers(); ++l) {
    json layer = {{"weights", detail::matrix_json(m.params.weights[l])},
                  {"bias", std::vector<double>(m.params.biases[l].data(),
                                               m.params.biases[l].data() + m.params.biases[l].size())}};
    if (!m.mask.empty()) layer["mask"] = detail::matrix_json(m.mask.layers[l]);
    layers.push_back(std::move(layer));
  }
  const auto& p = m.provenance;
  const auto& mt = m.metrics;
  return {
      {"format", kModelFormat},
      {"version", kModelVersion},
      {"config", config_json(m.config)},
      {"provenance",
       {{"prior", p.prior}, {"prune_rate", p.prune_rate}, {"seed", p.seed},
        {"train_range", p.train_range}, {"val_range", p.val_range}, {"test_range", p.test_range}}},
      {"metrics",
       {{"pretrain_error_rate", detail::num(mt.pretrain_error_rate)},
        {"pretrain_test_ic", detail::num(mt.pretrain_test_ic)},
        {"train_ic", detail::num(mt.train_ic)},
        {"val_ic", detail::num(mt.val_ic)},
        {"test_ic", detail::num(mt.test_ic)},
        {"finetune_steps_run", mt.finetune_steps_run},
        {"degenerate_days", mt.degenerate_days}}},
      {"layers", std::move(layers)},
  };
}

inline discovery::FactorModel model_from(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw UserError("not a factor model file");
    if (j.at("version").get<int>() != kModelVersion) {
      throw UserError("unsupported model version " + std::to_string(j.at("version").get<int>()));
    }
    discovery::FactorModel m;
    m.config = config_from(j.at("config"));
    const auto& p = j.at("provenance");
    m.provenance = {p.at("prior").get<std::string>(), p.at("prune_rate").get<double>(),
                    p.at("seed").get<std::uint64_t>(), p.at("train_range").get<std::string>(),
                    p.at("val_range").get<std::string>(), p.at("test_range").get<std::string>()};
    const auto& mt = j.at("metrics");
    m.metrics.pretrain_error_rate = detail::num(mt.at("pretrain_error_rate"));
    m.metrics.pretrain_test_ic = detail::num(mt.at("pretrain_test_ic"));
    m.metrics.train_ic = detail::num(mt.at("train_ic"));
    m.metrics.val_ic = detail::num(mt.at("val_ic"));
    m.metrics.test_ic = detail::num(mt.at("test_ic"));
    m.metrics.finetune_steps_run = mt.at("finetune_steps_run").get<std::size_t>();
    m.metrics.degenerate_days = mt.at("degenerate_days").get<std::size_t>();
    bool masked = false;
    for (const auto& layer : j.at("layers")) {
      m.params.weights.push_back(detail::matrix_from(layer.at("weights")));
      const auto b = layer.at("bias").get<std::vector<double>>();
      m.params.biases.push_back(Eigen::Map<const nn::Vector>(b.data(), static_cast<Eigen::Index>(b.size())));
      if (layer.contains("mask")) {
        masked = true;
        m.mask.layers.push_back(detail::matrix_from(layer.at("mask")));
      }
    }
    if (masked && m.mask.layers.size() != m.params.layers()) throw UserError("model file: partial mask");
    nn::detail::check_shapes(m.config, m.params, m.mask.empty() ? nullptr : &m.mask);
    return m;
  } catch (const json::exception& e) {
    throw UserError(std::string("malformed model file: ") + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw UserError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw UserError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_model(const discovery::FactorModel& m, const std::filesystem::path& path) {
  write_text(path, model_json(m).dump() + "\n");
}

inline discovery::FactorModel load_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw UserError("cannot parse model " + path.string() + ": " + e.what());
  }
  return model_from(j);
}

/// Line-delimited JSON records.
inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_text(path, text);
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UserError("missing manifest " + path.string());
  std::istringstream in(read_text(path));
  std::vector<json> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw UserError(path.string() + ":" + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace adnn::io
