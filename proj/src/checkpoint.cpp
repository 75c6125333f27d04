#include "spider/checkpoint.hpp"

#include "spider/data.hpp"

#include <fstream>

namespace spider {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint) {
  nlohmann::json manifest = checkpoint.manifest;
  manifest["params"] = nlohmann::json::array();
  manifest["weights"] = with_suffix(stem, ".bin").filename().string();
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(Errc::io, "cannot write " + with_suffix(stem, ".bin").string());
  const auto& params = checkpoint.params;
  for (int i = 0; i < params.size(); ++i) {
    const auto& m = params[i];
    manifest["params"].push_back({{"name", params.name(i)}, {"rows", m.rows()}, {"cols", m.cols()}});
    TensorBlock block{1, static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
    block.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) block.values.push_back(m(r, c));
    write_tensor(bin, block);
  }
  std::ofstream out(with_suffix(stem, ".json"));
  if (!out) throw Error(Errc::io, "cannot write " + with_suffix(stem, ".json").string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) throw Error(Errc::io, "cannot open " + with_suffix(stem, ".json").string());
  Checkpoint out;
  try {
    out.manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::io, with_suffix(stem, ".json").string() + ": " + e.what());
  }
  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(Errc::io, "cannot open " + with_suffix(stem, ".bin").string());
  for (const auto& p : out.manifest.at("params")) {
    const TensorBlock block = read_tensor(bin);
    const auto rows = p.at("rows").get<Eigen::Index>(), cols = p.at("cols").get<Eigen::Index>();
    if (block.frames != 1 || block.rows != rows || block.cols != cols)
      throw Error(Errc::io, "parameter '" + p.at("name").get<std::string>() + "' has the wrong shape on disk");
    const int k = out.params.add(p.at("name").get<std::string>(), rows, cols);
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) out.params[k](r, c) = block.values[n++];
  }
  out.manifest.erase("params");
  out.manifest.erase("weights");
  return out;
}

nlohmann::json to_json(const nn::ConvNetConfig& c) {
  return {{"window_frames", c.window_frames},   {"temporal_kernel", c.temporal_kernel},
          {"n_feature_layers", c.n_feature_layers}, {"lrelu_slope", c.lrelu_slope},
          {"channels", c.channels},             {"pool_factor", c.pool_factor},
          {"time_features", c.time_features}};
}

nn::ConvNetConfig convnet_config_from_json(const nlohmann::json& j) {
  nn::ConvNetConfig c;
  c.window_frames = j.value("window_frames", c.window_frames);
  c.temporal_kernel = j.value("temporal_kernel", c.temporal_kernel);
  c.n_feature_layers = j.value("n_feature_layers", c.n_feature_layers);
  c.lrelu_slope = j.value("lrelu_slope", c.lrelu_slope);
  c.channels = j.value("channels", c.channels);
  c.pool_factor = j.value("pool_factor", c.pool_factor);
  c.time_features = j.value("time_features", c.time_features);
  c.validate();
  return c;
}

}  // namespace spider
