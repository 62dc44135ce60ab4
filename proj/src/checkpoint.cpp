#include "utrcaf/checkpoint.hpp"

#include <set>

#include "utrcaf/error.hpp"
#include "utrcaf/io.hpp"

namespace utrcaf {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + where + "." + key + "'");
}

json flat_row_major(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

Matrix matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows * cols)
    throw ParseError(what + " must be an array of " + std::to_string(rows * cols) + " numbers");
  Matrix m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(i++).get<double>();
  return m;
}

}  // namespace

json arch_to_json(const ArchitectureSpec& arch) {
  return json{{"input_dim", arch.input_dim},
              {"hidden_dims", arch.hidden_dims},
              {"bottleneck_dim", arch.bottleneck_dim},
              {"num_classes", arch.num_classes},
              {"activation", arch.activation == Activation::relu ? "relu" : "tanh"}};
}

ArchitectureSpec arch_from_json(const json& j) {
  reject_unknown(j, {"input_dim", "hidden_dims", "bottleneck_dim", "num_classes", "activation"},
                 "arch");
  ArchitectureSpec a;
  try {
    if (j.contains("input_dim")) a.input_dim = j["input_dim"].get<int>();
    if (j.contains("hidden_dims")) a.hidden_dims = j["hidden_dims"].get<std::vector<int>>();
    if (j.contains("bottleneck_dim")) a.bottleneck_dim = j["bottleneck_dim"].get<int>();
    if (j.contains("num_classes")) a.num_classes = j["num_classes"].get<int>();
    if (j.contains("activation")) {
      const auto act = j["activation"].get<std::string>();
      if (act == "relu")
        a.activation = Activation::relu;
      else if (act == "tanh")
        a.activation = Activation::tanh;
      else
        throw ConfigError("arch.activation must be 'relu' or 'tanh', got '" + act + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("arch: ") + e.what());
  }
  return a;
}

json params_to_json(const ModelParams& params) {
  json layers = json::array();
  for (const auto& layer : params.encoder)
    layers.push_back(json::array({flat_row_major(layer.weight), flat_row_major(layer.bias)}));
  return json{{"arch", arch_to_json(params.arch)},
              {"encoder_layers", layers},
              {"classifier_direction", flat_row_major(params.direction)},
              {"classifier_scale", flat_row_major(params.scale)}};
}

ModelParams params_from_json(const json& j) {
  reject_unknown(j, {"arch", "encoder_layers", "classifier_direction", "classifier_scale"},
                 "checkpoint");
  for (const char* key : {"arch", "encoder_layers", "classifier_direction", "classifier_scale"})
    if (!j.contains(key)) throw ParseError(std::string("checkpoint is missing '") + key + "'");
  ModelParams p;
  p.arch = arch_from_json(j["arch"]);
  p.arch.validate();
  std::vector<int> dims{p.arch.input_dim};
  dims.insert(dims.end(), p.arch.hidden_dims.begin(), p.arch.hidden_dims.end());
  dims.push_back(p.arch.bottleneck_dim);
  const json& layers = j["encoder_layers"];
  if (!layers.is_array() || layers.size() + 1 != dims.size())
    throw ParseError("checkpoint encoder_layers must hold " + std::to_string(dims.size() - 1) +
                     " layers");
  try {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const json& pair = layers[l];
      if (!pair.is_array() || pair.size() != 2)
        throw ParseError("encoder layer " + std::to_string(l) + " must be [weights, bias]");
      const std::string tag = "encoder layer " + std::to_string(l);
      Layer layer{matrix_from(pair[0], dims[l + 1], dims[l], tag + " weights"),
                  matrix_from(pair[1], dims[l + 1], 1, tag + " bias")};
      p.encoder.push_back(std::move(layer));
    }
    p.direction = matrix_from(j["classifier_direction"], p.arch.num_classes,
                              p.arch.bottleneck_dim, "classifier_direction");
    p.scale = matrix_from(j["classifier_scale"], p.arch.num_classes, 1, "classifier_scale");
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  p.validate();
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, params_to_json(params).dump() + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  return params_from_json(j);
}

}  // namespace utrcaf
