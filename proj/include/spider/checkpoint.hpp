#ifndef SPIDER_CHECKPOINT_HPP
#define SPIDER_CHECKPOINT_HPP

#include "spider/networks.hpp"

#include <json.hpp>

#include <filesystem>

namespace spider {

/// A parameter set plus its manifest.
///
/// On disk: `<stem>.json` holds the manifest (caller fields plus a "params" list of
/// {name, rows, cols}) and `<stem>.bin` holds one tensor block per parameter (frames = 1,
/// row-major), in list order.
struct Checkpoint {
  nlohmann::json manifest;
  nn::ParamSet<float> params;
};

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint);
/// Throws Errc::io on missing or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& stem);

nlohmann::json to_json(const nn::ConvNetConfig& config);
nn::ConvNetConfig convnet_config_from_json(const nlohmann::json& j);

}  // namespace spider

#endif  // SPIDER_CHECKPOINT_HPP
