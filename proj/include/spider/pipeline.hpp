#ifndef SPIDER_PIPELINE_HPP
#define SPIDER_PIPELINE_HPP

#include "spider/agent.hpp"
#include "spider/bench.hpp"
#include "spider/classic.hpp"
#include "spider/mtrnet.hpp"
#include "spider/policy.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace spider {

/// One subcommand invocation: a parsed JSON config plus the master seed and output directory.
/// Relative paths inside the config resolve against the config file's directory.
struct RunContext {
  nlohmann::json config;
  std::filesystem::path config_dir;
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;

  std::filesystem::path resolve(const std::string& path) const;
};

/// Reads the config file and creates `out_dir`. Throws Errc::config or Errc::io.
RunContext load_run_context(const std::filesystem::path& config_file, std::uint64_t seed,
                            const std::filesystem::path& out_dir);

/// Independent seed for a named stochastic sub-operation.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

/// Reads an object's keys with defaults and rejects keys that were never read.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string where);

  bool has(const std::string& key) const;
  template <class T>
  T get(const std::string& key, const T& fallback) {
    used_.push_back(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::config, where_ + "." + key + " has the wrong type");
    }
  }
  template <class T>
  T require(const std::string& key) {
    if (!has(key)) throw Error(Errc::config, where_ + "." + key + " is required");
    return get<T>(key, T{});
  }
  const nlohmann::json& child(const std::string& key);
  /// Throws Errc::config naming any unread key.
  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string> used_;
};

SyntheticConfig synthetic_from_json(const nlohmann::json& j, std::uint64_t default_seed);
SplitSpec split_from_json(const nlohmann::json& j);
nn::ConvNetConfig convnet_from_json(const nlohmann::json& j, nn::ConvNetConfig defaults = {});
TrainHyper train_hyper_from_json(const nlohmann::json& j, std::uint64_t seed);
AgentConfig agent_config_from_json(const nlohmann::json& j, std::uint64_t seed);
BucketConfig buckets_from_json(const nlohmann::json& j);

/// A reconstructor described by {"kind": "mtrnet" | "knn" | "cs" | "stcs", ...}.
struct LoadedReconstructor {
  std::unique_ptr<MtrnetModel> mtrnet;
  std::unique_ptr<Reconstructor> reconstructor;
};
LoadedReconstructor reconstructor_from_json(const nlohmann::json& j, const RunContext& ctx);

/// Subcommands. Each writes its artifacts under ctx.out_dir and returns a summary that is
/// also written to summary.json.
nlohmann::json run_synth(const RunContext& ctx);
nlohmann::json run_ingest(const RunContext& ctx);
nlohmann::json run_train_mtrnet(const RunContext& ctx);
nlohmann::json run_gain_curve(const RunContext& ctx);
nlohmann::json run_train_agent(const RunContext& ctx);
nlohmann::json run_train_policy(const RunContext& ctx);
nlohmann::json run_evaluate(const RunContext& ctx);
nlohmann::json run_report(const RunContext& ctx);

struct PipelineCommand {
  const char* name;
  const char* help;
  nlohmann::json (*run)(const RunContext&);
};
const std::vector<PipelineCommand>& pipeline_commands();

/// Parses a report.csv written by `evaluate`.
std::vector<StrategyReport> read_report_csv(std::istream& in);

}  // namespace spider

#endif  // SPIDER_PIPELINE_HPP
