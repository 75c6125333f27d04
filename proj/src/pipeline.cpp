#include "spider/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace spider {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path RunContext::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : config_dir / p;
}

RunContext load_run_context(const fs::path& config_file, std::uint64_t seed, const fs::path& out_dir) {
  std::ifstream in(config_file);
  if (!in) throw Error(Errc::io, "cannot open config " + config_file.string());
  RunContext ctx;
  try {
    ctx.config = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw Error(Errc::config, config_file.string() + ": " + e.what());
  }
  if (!ctx.config.is_object()) throw Error(Errc::config, config_file.string() + " must hold a JSON object");
  ctx.config_dir = fs::absolute(config_file).parent_path();
  ctx.out_dir = out_dir;
  ctx.seed = seed;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + out_dir.string() + ": " + ec.message());
  return ctx;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// ---------------------------------------------------------------------------------------------
// Config parsing

ConfigReader::ConfigReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
  if (!j_.is_object()) throw Error(Errc::config, where_ + " must be an object");
}

bool ConfigReader::has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

const json& ConfigReader::child(const std::string& key) {
  used_.push_back(key);
  static const json empty = json::object();
  if (!has(key)) return empty;
  if (!j_.at(key).is_object()) throw Error(Errc::config, where_ + "." + key + " must be an object");
  return j_.at(key);
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : j_.items())
    if (std::find(used_.begin(), used_.end(), key) == used_.end())
      throw Error(Errc::config, "unknown key " + where_ + "." + key);
}

SyntheticConfig synthetic_from_json(const json& j, std::uint64_t default_seed) {
  ConfigReader r(j, "synthetic");
  SyntheticConfig c;
  c.geometry = GridGeometry(r.get("rows", c.geometry.rows), r.get("cols", c.geometry.cols));
  c.days = r.get("days", c.days);
  c.delta_minutes = r.get("delta_minutes", c.delta_minutes);
  c.seed = r.get("seed", default_seed);
  c.base_level = r.get("base_level", c.base_level);
  c.peak_amplitude = r.get("peak_amplitude", c.peak_amplitude);
  c.n_hotspots = r.get("n_hotspots", c.n_hotspots);
  c.noise_std = r.get("noise_std", c.noise_std);
  c.weekend_scale = r.get("weekend_scale", c.weekend_scale);
  c.peak_noise_factor = r.get("peak_noise_factor", c.peak_noise_factor);
  c.n_event_sites = r.get("n_event_sites", c.n_event_sites);
  c.event_amplitude = r.get("event_amplitude", c.event_amplitude);
  c.event_probability = r.get("event_probability", c.event_probability);
  r.finish();
  c.validate();
  return c;
}

SplitSpec split_from_json(const json& j) {
  ConfigReader r(j, "split");
  SplitSpec s;
  s.train_days = r.get("train_days", s.train_days);
  s.test_days = r.get("test_days", s.test_days);
  r.finish();
  if (s.train_days < 1 || s.test_days < 1) throw Error(Errc::config, "split days must be >= 1");
  return s;
}

nn::ConvNetConfig convnet_from_json(const json& j, nn::ConvNetConfig c) {
  ConfigReader r(j, "model");
  c.window_frames = r.get("window_frames", c.window_frames);
  c.temporal_kernel = r.get("temporal_kernel", c.temporal_kernel);
  c.n_feature_layers = r.get("n_feature_layers", c.n_feature_layers);
  c.lrelu_slope = r.get("lrelu_slope", c.lrelu_slope);
  c.channels = r.get("channels", c.channels);
  c.pool_factor = r.get("pool_factor", c.pool_factor);
  c.time_features = r.get("time_features", c.time_features);
  r.finish();
  c.validate();
  return c;
}

TrainHyper train_hyper_from_json(const json& j, std::uint64_t seed) {
  ConfigReader r(j, "train");
  TrainHyper h;
  h.seed = seed;
  h.learning_rate = r.get("learning_rate", h.learning_rate);
  h.batch_size = r.get("batch_size", h.batch_size);
  h.epochs = r.get("epochs", h.epochs);
  const auto range = r.get("mask_rate_range", std::vector<double>{h.mask_rate_range.first, h.mask_rate_range.second});
  if (range.size() != 2) throw Error(Errc::config, "train.mask_rate_range needs two values");
  h.mask_rate_range = {range[0], range[1]};
  h.validation_fraction = r.get("validation_fraction", h.validation_fraction);
  h.max_windows_per_epoch = r.get("max_windows_per_epoch", h.max_windows_per_epoch);
  h.final_lr_fraction = r.get("final_lr_fraction", h.final_lr_fraction);
  h.persistent_mask_fraction = r.get("persistent_mask_fraction", h.persistent_mask_fraction);
  r.finish();
  h.validate();
  return h;
}

AgentConfig agent_config_from_json(const json& j, std::uint64_t seed) {
  ConfigReader r(j, "agent");
  AgentConfig c;
  c.seed = seed;
  c.k = r.get("k", c.k);
  c.epochs = r.get("epochs", c.epochs);
  c.learning_rate = r.get("learning_rate", c.learning_rate);
  c.eta_scale = r.get("eta_scale", c.eta_scale);
  ConfigReader n(r.child("net"), "agent.net");
  c.net.conv1 = n.get("conv1", c.net.conv1);
  c.net.conv2 = n.get("conv2", c.net.conv2);
  c.net.reduce = n.get("reduce", c.net.reduce);
  c.net.hidden = n.get("hidden", c.net.hidden);
  c.net.prev_actions_len = n.get("prev_actions_len", c.net.prev_actions_len);
  c.net.pool_factor = n.get("pool_factor", c.net.pool_factor);
  c.net.lrelu_slope = n.get("lrelu_slope", c.net.lrelu_slope);
  n.finish();
  r.finish();
  return c;
}

BucketConfig buckets_from_json(const json& j) {
  ConfigReader r(j, "buckets");
  BucketConfig b;
  b.peak_start_hour = r.get("peak_start_hour", b.peak_start_hour);
  b.peak_end_hour = r.get("peak_end_hour", b.peak_end_hour);
  for (const auto& s : r.get("holidays", std::vector<std::string>{})) {
    int y = 0;
    unsigned m = 0, d = 0;
    char dash1 = 0, dash2 = 0;
    std::istringstream in(s);
    if (!(in >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-')
      throw Error(Errc::config, "holiday '" + s + "' is not YYYY-MM-DD");
    b.holidays.push_back(std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d});
  }
  r.finish();
  b.validate();
  return b;
}

LoadedReconstructor reconstructor_from_json(const json& j, const RunContext& ctx) {
  ConfigReader r(j, "reconstructor");
  const std::string kind = r.get<std::string>("kind", "mtrnet");
  LoadedReconstructor out;
  if (kind == "mtrnet") {
    out.mtrnet = std::make_unique<MtrnetModel>(load_mtrnet(ctx.resolve(r.require<std::string>("checkpoint"))));
    out.reconstructor = std::make_unique<MtrnetReconstructor>(*out.mtrnet);
  } else if (kind == "knn") {
    out.reconstructor = std::make_unique<KnnReconstructor>(r.get("k_nn", 5));
  } else if (kind == "cs" || kind == "stcs") {
    StcsConfig c;
    c.rank = r.get("rank", c.rank);
    c.lambda = r.get("lambda", c.lambda);
    c.max_iters = r.get("max_iters", c.max_iters);
    c.tol = r.get("tol", c.tol);
    c.seed = r.get("seed", c.seed);
    if (kind == "cs") {
      out.reconstructor = std::make_unique<CsReconstructor>(static_cast<CsConfig>(c));
    } else {
      c.spatial_weight = r.get("spatial_weight", c.spatial_weight);
      c.temporal_weight = r.get("temporal_weight", c.temporal_weight);
      out.reconstructor = std::make_unique<StcsReconstructor>(c, r.get("frames", 7));
    }
  } else {
    throw Error(Errc::config, "unknown reconstructor kind '" + kind + "'");
  }
  r.finish();
  return out;
}

// ---------------------------------------------------------------------------------------------
// Shared helpers

namespace {

struct Data {
  DatasetSeries train, test;  // normalized
  NormStats norm;
};

DatasetSeries load_raw(ConfigReader& r, const RunContext& ctx) {
  if (r.has("series") == r.has("synthetic"))
    throw Error(Errc::config, "give exactly one of series (a file) or synthetic (a generator config)");
  if (r.has("series")) return load_series(ctx.resolve(r.get<std::string>("series", "")));
  return synthesize_traffic(synthetic_from_json(r.child("synthetic"), ctx.seed));
}

// Splits and normalizes; `norm` overrides the statistics fitted on the train split.
Data load_data(ConfigReader& r, const RunContext& ctx, const NormStats* norm = nullptr) {
  const DatasetSeries raw = load_raw(r, ctx);
  const SeriesSplit parts = split(raw, split_from_json(r.child("split")));
  Data d;
  d.norm = norm ? *norm : fit_normalizer(parts.train);
  d.train = normalized(parts.train, d.norm);
  d.test = normalized(parts.test, d.norm);
  return d;
}

QualityConfig quality_from_json(const json& j, const RunContext& ctx) {
  ConfigReader r(j, "quality");
  QualityConfig q;
  q.beta = r.get("beta", q.beta);
  if (r.has("epsilon") == r.has("threshold_file"))
    throw Error(Errc::config, "quality needs exactly one of epsilon or threshold_file");
  if (r.has("epsilon")) {
    q.epsilon = r.get("epsilon", q.epsilon);
  } else {
    const fs::path p = ctx.resolve(r.get<std::string>("threshold_file", ""));
    std::ifstream in(p);
    std::string header, row;
    if (!in || !std::getline(in, header) || !std::getline(in, row))
      throw Error(Errc::io, "cannot read threshold file " + p.string());
    q.epsilon = std::stod(row.substr(0, row.find(',')));
  }
  r.finish();
  q.validate();
  return q;
}

std::ofstream open_out(const RunContext& ctx, const std::string& name) {
  std::ofstream out(ctx.out_dir / name);
  if (!out) throw Error(Errc::io, "cannot write " + (ctx.out_dir / name).string());
  out << std::setprecision(10);
  return out;
}

json finish_run(const RunContext& ctx, const std::string& command, json summary) {
  summary["command"] = command;
  summary["seed"] = ctx.seed;
  open_out(ctx, "summary.json") << summary.dump(2) << '\n';
  return summary;
}

std::vector<std::string> check_paths(const RunContext& ctx, const std::vector<std::string>& paths) {
  std::vector<std::string> missing;
  for (const auto& p : paths)
    if (!fs::exists(ctx.resolve(p))) missing.push_back(ctx.resolve(p).string());
  return missing;
}

void require_paths(const RunContext& ctx, const std::vector<std::string>& paths) {
  const auto missing = check_paths(ctx, paths);
  if (missing.empty()) return;
  std::string msg = "missing artifacts:";
  for (const auto& m : missing) msg += " " + m;
  throw Error(Errc::io, msg);
}

struct Range {
  std::int64_t first, last;
};

// Steps [offset, offset + count) of a series, with offset defaulting to the first full window.
Range range_from_json(const json& j, const DatasetSeries& s, int frames, const std::string& where) {
  ConfigReader r(j, where);
  const int offset = r.get("offset", frames - 1);
  const int count = r.get("count", s.size() - offset);
  r.finish();
  if (offset < frames - 1 || count < 1 || offset + count > s.size())
    throw Error(Errc::range, where + " range lies outside the series or before its first full window");
  return {s.first_t() + offset, s.first_t() + offset + count - 1};
}

void write_budget_csv(std::ostream& out, const BudgetTable& b) {
  out << "slot,day_of_week,hour,count,present,unreachable\n";
  for (int k = 0; k < kWeekSlots; ++k) {
    const auto i = static_cast<std::size_t>(k);
    out << k << ',' << k / 24 << ',' << k % 24 << ',' << b.count[i] << ',' << b.present[i] << ',' << b.unreachable[i]
        << '\n';
  }
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Subcommands

json run_synth(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  const SyntheticConfig sc = synthetic_from_json(r.child("synthetic"), ctx.seed);
  r.finish();
  const DatasetSeries s = synthesize_traffic(sc);
  save_series(ctx.out_dir / "series.spdr", s);
  auto out = open_out(ctx, "series_summary.csv");
  out << "t,day_of_week,hour,mean,max\n";
  for (const auto& snap : s.snapshots) {
    const TimeInfo info = s.time_info(snap.t());
    out << snap.t() << ',' << info.day_of_week << ',' << info.hour << ',' << snap.values().mean() << ','
        << snap.values().maxCoeff() << '\n';
  }
  return finish_run(ctx, "synth", {{"steps", s.size()}, {"rows", sc.geometry.rows}, {"cols", sc.geometry.cols}});
}

json run_ingest(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  const fs::path csv = ctx.resolve(r.require<std::string>("csv"));
  const GridGeometry g(r.require<int>("rows"), r.require<int>("cols"));
  const int delta = r.get("delta_minutes", 10);
  const int offset = r.get("utc_offset_minutes", 0);
  r.finish();
  LoadReport report;
  const DatasetSeries s = load_grid_csv(csv, g, delta, &report, offset);
  save_series(ctx.out_dir / "series.spdr", s);
  auto out = open_out(ctx, "ingest_report.csv");
  out << "rows,buckets,empty_buckets,filled_readings,steps\n"
      << report.rows << ',' << report.buckets << ',' << report.empty_buckets << ',' << report.filled_readings << ','
      << s.size() << '\n';
  return finish_run(ctx, "ingest", {{"steps", s.size()}, {"rows_read", report.rows}});
}

json run_train_mtrnet(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  const Data d = load_data(r, ctx);
  const MtrnetConfig mc = convnet_from_json(r.child("model"));
  const TrainHyper h = train_hyper_from_json(r.child("train"), derive_seed(ctx.seed, "mtrnet-train"));
  r.finish();
  MtrnetModel model = mtrnet_init(mc, derive_seed(ctx.seed, "mtrnet-init"), d.norm);
  const TrainHistory hist = mtrnet_train(model, d.train, h);
  save_mtrnet(ctx.out_dir / "mtrnet", model);
  auto out = open_out(ctx, "mtrnet_training.csv");
  out << "epoch,train_mae,val_mae\n0,," << hist.initial_val_mae << '\n';
  for (const auto& e : hist.epochs) out << e.epoch << ',' << e.train_mae << ',' << e.val_mae << '\n';
  // Cost of the same architecture across feature-block depths.
  auto flops = open_out(ctx, "mtrnet_flops.csv");
  flops << "n_feature_layers,flops\n";
  for (int n = 1; n <= std::max(8, mc.n_feature_layers); ++n) {
    MtrnetConfig c = mc;
    c.n_feature_layers = n;
    flops << n << ','
          << nn::count_flops(nn::ConvNet<float>(c, 0).describe(d.train.geometry.rows, d.train.geometry.cols)) << '\n';
  }
  return finish_run(ctx, "train-mtrnet",
                    {{"epochs", hist.epochs.size()},
                     {"final_val_mae", hist.epochs.empty() ? hist.initial_val_mae : hist.epochs.back().val_mae},
                     {"parameters", model.net.params().scalar_count()}});
}

json run_gain_curve(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  LoadedReconstructor rec = reconstructor_from_json(r.child("reconstructor"), ctx);
  const Data d = load_data(r, ctx, rec.mtrnet ? &rec.mtrnet->norm : nullptr);
  const std::string on = r.get<std::string>("on", "train");
  if (on != "train" && on != "test") throw Error(Errc::config, "on must be train or test");
  const auto rates = r.get("rates", std::vector<double>{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5});
  GainOptions opt;
  opt.masks = r.get("masks", opt.masks);
  opt.window_frames = r.get("window_frames", opt.window_frames);
  opt.seed = derive_seed(ctx.seed, "gain-curve");
  const double knee = r.get("knee_rate", 0.35);
  const std::optional<double> cutoff =
      r.has("cutoff") ? std::optional<double>(r.get("cutoff", 0.0)) : std::nullopt;
  r.finish();
  const auto curve = gain_curve(on == "train" ? d.train : d.test, *rec.reconstructor, rates, opt);
  const ThresholdChoice choice = choose_threshold(curve, knee, cutoff);
  {
    auto out = open_out(ctx, "gain_curve.csv");
    write_gain_csv(out, curve);
  }
  open_out(ctx, "threshold.csv") << "epsilon,rate,exact\n" << choice.epsilon << ',' << choice.rate << ','
                                 << choice.exact << '\n';
  PlotSeries gain{"gain", {}, {}}, err{"mean MAE", {}, {}};
  for (const auto& p : curve) {
    gain.x.push_back(p.rate);
    gain.y.push_back(p.gain);
    err.x.push_back(p.rate);
    err.y.push_back(p.mean_mae);
  }
  {
    auto out = open_out(ctx, "gain_curve.svg");
    write_xy_svg(out, {gain}, "MAE gain per sampling-rate step (" + rec.reconstructor->name() + ")", "sampling rate",
                 "gain");
  }
  {
    auto out = open_out(ctx, "mae_curve.svg");
    write_xy_svg(out, {err}, "Mean MAE by sampling rate (" + rec.reconstructor->name() + ")", "sampling rate", "MAE");
  }
  return finish_run(ctx, "gain-curve",
                    {{"epsilon", choice.epsilon}, {"rate", choice.rate}, {"exact", choice.exact}});
}

json run_train_agent(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  const std::string mtr_path = r.require<std::string>("mtrnet");
  require_paths(ctx, {mtr_path + ".json", mtr_path + ".bin"});
  const MtrnetModel mtr = load_mtrnet(ctx.resolve(mtr_path));
  const Data d = load_data(r, ctx, &mtr.norm);
  EnvConfig ec;
  ec.quality = quality_from_json(r.child("quality"), ctx);
  {
    ConfigReader e(r.child("env"), "env");
    ec.window_frames = e.get("window_frames", ec.window_frames);
    ec.unavailable_fraction = e.get("unavailable_fraction", ec.unavailable_fraction);
    e.finish();
  }
  const AgentConfig ac = agent_config_from_json(r.child("agent"), derive_seed(ctx.seed, "agent"));
  const int frames = ec.window_frames > 0 ? ec.window_frames : mtr.config.window_frames;
  const Range range = range_from_json(r.child("episodes"), d.train, frames, "episodes");
  r.finish();

  const MtrnetReconstructor rec(mtr);
  Environment env(d.train, rec, ec);
  AgentModel agent = agent_init(ac, d.train.geometry);
  std::vector<std::int64_t> ts;
  for (std::int64_t t = range.first; t <= range.last; ++t) ts.push_back(t);
  const AgentTraining res = train_agent(agent, env, ts);
  save_agent(ctx.out_dir / "agent", agent);
  {
    std::ofstream out(ctx.out_dir / "episodes.jsonl");
    write_episodes(out, res.logs);
  }
  const auto dataset = export_selection_dataset(res.logs, d.train, frames);
  {
    std::ofstream out(ctx.out_dir / "selection_dataset.jsonl");
    write_selection_dataset(out, dataset);
  }
  double mean_len = 0.0;
  {
    auto out = open_out(ctx, "agent_episodes.csv");
    out << "t,iterations,final_mae,truncated\n";
    for (const auto& l : res.logs) {
      out << l.t << ',' << l.iterations << ',' << l.final_mae << ',' << l.truncated << '\n';
      mean_len += l.iterations;
    }
    mean_len /= static_cast<double>(res.logs.size());
  }
  {
    auto out = open_out(ctx, "agent_loss.csv");
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) out << e + 1 << ',' << res.epoch_loss[e] << '\n';
  }
  return finish_run(ctx, "train-agent",
                    {{"episodes", res.episodes}, {"mean_length", mean_len}, {"epsilon", ec.quality.epsilon},
                     {"samples", dataset.size()}});
}

json run_train_policy(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  const std::string dataset_path = r.require<std::string>("dataset");
  require_paths(ctx, {dataset_path});
  PolicyConfig pc;
  pc.net = convnet_from_json(r.child("model"), pc.net);
  pc.threshold = r.get("threshold", pc.threshold);
  pc.seed = derive_seed(ctx.seed, "policy-init");
  const TrainHyper h = train_hyper_from_json(r.child("train"), derive_seed(ctx.seed, "policy-train"));
  const bool calibrate = r.has("calibration");
  const json calibration = r.child("calibration");
  r.finish();
  std::ifstream in(ctx.resolve(dataset_path));
  const auto dataset = read_selection_dataset(in);
  PolicyModel model = policy_init(pc);
  const PolicyHistory hist = policy_train(model, dataset, h);
  {
    auto out = open_out(ctx, "policy_training.csv");
    out << "epoch,bce\n";
    for (std::size_t e = 0; e < hist.epoch_bce.size(); ++e) out << e + 1 << ',' << hist.epoch_bce[e] << '\n';
  }
  json summary{{"samples", dataset.size()}, {"final_bce", hist.epoch_bce.empty() ? 0.0 : hist.epoch_bce.back()}};

  // Optional: pick the binarization threshold on the training split against epsilon.
  if (calibrate) {
    ConfigReader c(calibration, "calibration");
    const std::string mtr_path = c.require<std::string>("mtrnet");
    require_paths(ctx, {mtr_path + ".json", mtr_path + ".bin"});
    const MtrnetModel mtr = load_mtrnet(ctx.resolve(mtr_path));
    const Data d = load_data(c, ctx, &mtr.norm);
    const QualityConfig quality = quality_from_json(c.child("quality"), ctx);
    std::vector<double> grid;
    for (int k = 1; k <= 19; ++k) grid.push_back(0.05 * k);
    grid = c.get("thresholds", grid);
    const int refine = c.get("refine", 4);
    const int frames = std::max(mtr.config.window_frames, model.config.net.window_frames);
    const Range range = range_from_json(c.child("steps"), d.train, frames, "calibration.steps");
    c.finish();
    const MtrnetReconstructor rec(mtr);
    const Calibration cal =
        calibrate_threshold(model, d.train, rec, mtr.norm, quality.epsilon, grid, range.first, range.last, refine);
    model.config.threshold = cal.threshold;
    auto out = open_out(ctx, "policy_calibration.csv");
    out << "threshold,mean_cells,mean_mae\n";
    for (const auto& p : cal.points) out << p.threshold << ',' << p.mean_cells << ',' << p.mean_mae << '\n';
    summary["calibration"] = {{"threshold", cal.threshold}, {"met", cal.met}, {"epsilon", quality.epsilon}};
  }
  save_policy(ctx.out_dir / "policy", model);
  summary["threshold"] = model.config.threshold;
  return finish_run(ctx, "train-policy", summary);
}

json run_evaluate(const RunContext& ctx) {
  using clock = std::chrono::steady_clock;
  ConfigReader r(ctx.config, "config");
  const std::string mtr_path = r.require<std::string>("mtrnet");
  const std::string policy_path = r.require<std::string>("policy");
  const std::string agent_path = r.get<std::string>("agent", "");
  const std::string episodes_path = r.get<std::string>("episodes", "");
  std::vector<std::string> needed{mtr_path + ".json", mtr_path + ".bin", policy_path + ".json", policy_path + ".bin"};
  if (!agent_path.empty()) {
    needed.push_back(agent_path + ".json");
    needed.push_back(agent_path + ".bin");
  }
  if (!episodes_path.empty()) needed.push_back(episodes_path);
  require_paths(ctx, needed);

  const MtrnetModel mtr = load_mtrnet(ctx.resolve(mtr_path));
  const PolicyModel policy = load_policy(ctx.resolve(policy_path));
  const Data d = load_data(r, ctx, &mtr.norm);
  const QualityConfig quality = quality_from_json(r.child("quality"), ctx);
  const BucketConfig buckets = buckets_from_json(r.child("buckets"));
  const int frames = std::max({r.get("window_frames", 0), mtr.config.window_frames, policy.config.net.window_frames});
  const Range range = range_from_json(r.child("test"), d.test, frames, "test");
  BudgetOptions bo;
  {
    ConfigReader b(r.child("budget"), "budget");
    bo.masks = b.get("masks", bo.masks);
    bo.max_iterations = b.get("max_iterations", bo.max_iterations);
    b.finish();
  }
  bo.window_frames = frames;
  const std::string freq_source = r.get<std::string>("frequency_source", episodes_path.empty() ? "policy" : "episodes");
  if (freq_source != "policy" && freq_source != "episodes")
    throw Error(Errc::config, "frequency_source must be policy or episodes");
  if (freq_source == "episodes" && episodes_path.empty())
    throw Error(Errc::config, "frequency_source episodes needs an episodes file");
  r.finish();

  const MtrnetReconstructor rec(mtr);
  json summary;

  // Spider: the policy network online over the test range.
  const PolicyEvaluation pe = policy_evaluate(policy, d.test, rec, buckets, mtr.norm, range.first, range.last);

  // Random baseline with its own budget table.
  bo.seed = derive_seed(ctx.seed, "budget-random");
  const BudgetTable random_budget = build_budget_table(d.train, rec, quality, bo, random_rule(d.train.geometry));
  const std::uint64_t random_seed = derive_seed(ctx.seed, "random-baseline");
  const StrategyRun random_run = run_strategy(
      "random", d.test, rec, frames,
      [&](const StateWindow&, std::int64_t t) {
        return random_baseline(random_budget, d.test.time_info(t), t, d.test.geometry, random_seed);
      },
      buckets, mtr.norm, range.first, range.last);

  // Historical baseline: selection frequencies on the train split.
  std::vector<SelectionMatrix> history;
  if (freq_source == "episodes") {
    std::ifstream in(ctx.resolve(episodes_path));
    for (const auto& l : read_episodes(in)) history.push_back(l.final_selection);
  } else {
    history = policy_evaluate(policy, d.train, rec, buckets, mtr.norm, d.train.first_t() + frames - 1, d.train.last_t())
                  .run.selections;
  }
  const FrequencyMatrix freq = build_frequency_matrix(history, d.train);
  bo.seed = derive_seed(ctx.seed, "budget-historical");
  const BudgetTable hist_budget = build_budget_table(d.train, rec, quality, bo, historical_rule(freq, d.train));
  const StrategyRun hist_run = run_strategy(
      "historical", d.test, rec, frames,
      [&](const StateWindow&, std::int64_t t) {
        return historical_baseline(freq, hist_budget, d.test.time_info(t), t);
      },
      buckets, mtr.norm, range.first, range.last);

  const std::vector<StrategyRun> runs{pe.run, random_run, hist_run};
  {
    std::vector<StrategyReport> reports;
    for (const auto& run : runs) reports.push_back(run.report);
    auto out = open_out(ctx, "report.csv");
    write_report_csv(out, reports);
  }
  {
    auto out = open_out(ctx, "per_step.csv");
    out << "strategy,t,cells,nmae,mae\n";
    for (const auto& run : runs)
      for (std::size_t i = 0; i < run.t.size(); ++i)
        out << run.report.strategy << ',' << run.t[i] << ',' << run.cells[i] << ',' << run.nmae[i] << ','
            << run.mae[i] << '\n';
  }
  {
    auto csv = open_out(ctx, "cells_over_time.csv");
    write_cells_over_time_csv(csv, runs);
    auto svg = open_out(ctx, "cells_over_time.svg");
    write_lines_svg(svg, runs, "Cells selected per step");
  }
  {
    auto a = open_out(ctx, "budget_random.csv");
    write_budget_csv(a, random_budget);
    auto b = open_out(ctx, "budget_historical.csv");
    write_budget_csv(b, hist_budget);
  }
  // Frequency heatmaps of the policy's test selections, split by peak and off-peak.
  {
    const GridGeometry& g = d.test.geometry;
    Grid peak_f = Grid::Zero(g.rows, g.cols), off_f = Grid::Zero(g.rows, g.cols);
    int np = 0, no = 0;
    for (std::size_t i = 0; i < pe.run.t.size(); ++i) {
      const auto where = buckets_for(d.test.time_info(pe.run.t[i]), buckets);
      const bool is_peak = std::find(where.begin(), where.end(), Bucket::peak) != where.end();
      (is_peak ? peak_f : off_f) += pe.run.selections[i].as_grid();
      ++(is_peak ? np : no);
    }
    if (np) peak_f /= np;
    if (no) off_f /= no;
    for (const auto& [name, grid] : {std::pair{std::string("frequency_peak"), peak_f}, {"frequency_offpeak", off_f}}) {
      auto csv = open_out(ctx, name + ".csv");
      write_heatmap_csv(csv, grid);
      auto svg = open_out(ctx, name + ".svg");
      write_heatmap_svg(svg, grid, name == "frequency_peak" ? "Selection frequency, peak" : "Selection frequency, off-peak");
    }
  }

  for (const auto& run : runs) {
    const auto& o = run.report.buckets[Bucket::overall];
    summary["strategies"][run.report.strategy] = {{"count", o.mean_cells()}, {"nmae", o.mean_nmae()}, {"mae", o.mean_mae()}};
  }
  summary["epsilon"] = quality.epsilon;
  summary["policy_latency_ms"] = pe.mean_latency_ms;

  // Optional reference: the trained agent, episode by episode over the same steps.
  if (!agent_path.empty()) {
    const AgentModel agent = load_agent(ctx.resolve(agent_path));
    EnvConfig ec;
    ec.quality = quality;
    ec.window_frames = frames;
    Environment env(d.test, rec, ec);
    const std::uint64_t agent_seed = derive_seed(ctx.seed, "agent-reference");
    auto out = open_out(ctx, "agent_reference.csv");
    out << "t,iterations,final_mae,truncated\n";
    double seconds = 0.0, mae_sum = 0.0, len = 0.0;
    long actions = 0;
    for (std::int64_t t = range.first; t <= range.last; ++t) {
      const auto t0 = clock::now();
      EpisodeLog log = run_agent_episode(agent, env, t, agent_seed ^ static_cast<std::uint64_t>(t));
      seconds += std::chrono::duration<double>(clock::now() - t0).count();
      out << log.t << ',' << log.iterations << ',' << log.final_mae << ',' << log.truncated << '\n';
      mae_sum += log.final_mae;
      len += log.iterations;
      actions += log.iterations;
      env.commit(log);
    }
    const double n = static_cast<double>(range.last - range.first + 1);
    summary["agent"] = {{"mean_length", len / n},
                        {"mean_final_mae", mae_sum / n},
                        {"seconds_per_episode", seconds / n},
                        {"ms_per_action", actions ? 1000.0 * seconds / static_cast<double>(actions) : 0.0}};
  }
  return finish_run(ctx, "evaluate", summary);
}

std::vector<StrategyReport> read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("strategy,bucket,n,count,nmae", 0) != 0)
    throw Error(Errc::io, "not a report table");
  std::vector<StrategyReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    while (f.size() < 7) f.emplace_back();
    if (out.empty() || out.back().strategy != f[0]) {
      out.emplace_back();
      out.back().strategy = f[0];
    }
    const auto it = std::find(kBucketNames.begin(), kBucketNames.end(), f[1]);
    if (it == kBucketNames.end()) throw Error(Errc::io, "unknown bucket " + f[1]);
    auto& b = out.back().buckets[static_cast<std::size_t>(it - kBucketNames.begin())];
    b.n = std::stol(f[2]);
    if (b.n > 0) {
      const double n = static_cast<double>(b.n);
      b.cells = std::stod(f[3]) * n;
      b.nmae = std::stod(f[4]) * n;
      b.mae = std::stod(f[5]) * n;
      b.mae_raw = std::stod(f[6]) * n;
    }
  }
  return out;
}

json run_report(const RunContext& ctx) {
  ConfigReader r(ctx.config, "config");
  const auto inputs = r.require<std::vector<std::string>>("inputs");
  r.finish();
  if (inputs.empty()) throw Error(Errc::config, "inputs is empty");
  std::vector<std::string> files;
  for (const auto& in : inputs) files.push_back(fs::is_directory(ctx.resolve(in)) ? in + "/report.csv" : in);
  require_paths(ctx, files);

  // Pool every input run bucket by bucket.
  std::vector<StrategyReport> pooled;
  for (const auto& f : files) {
    std::ifstream in(ctx.resolve(f));
    for (const auto& rep : read_report_csv(in)) {
      auto it = std::find_if(pooled.begin(), pooled.end(), [&](const auto& p) { return p.strategy == rep.strategy; });
      if (it == pooled.end()) {
        pooled.push_back(rep);
        continue;
      }
      for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
        auto& dst = it->buckets[b];
        const auto& src = rep.buckets[b];
        dst.n += src.n;
        dst.cells += src.cells;
        dst.nmae += src.nmae;
        dst.mae += src.mae;
        dst.mae_raw += src.mae_raw;
      }
    }
  }
  {
    auto out = open_out(ctx, "report.csv");
    write_report_csv(out, pooled);
  }
  const auto find = [&](const std::string& name) -> const StrategyReport* {
    for (const auto& p : pooled)
      if (p.strategy == name) return &p;
    return nullptr;
  };
  const StrategyReport* spider = find("spider-policy");
  json summary;
  {
    auto out = open_out(ctx, "savings.csv");
    out << "bucket,versus,spider_count,baseline_count,fewer_cells_pct\n";
    for (const char* base : {"random", "historical"}) {
      const StrategyReport* other = find(base);
      if (!spider || !other) continue;
      for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
        const auto& s = spider->buckets[b];
        const auto& o = other->buckets[b];
        if (s.n == 0 || o.n == 0 || o.mean_cells() == 0.0) continue;
        const double pct = 100.0 * (o.mean_cells() - s.mean_cells()) / o.mean_cells();
        out << kBucketNames[b] << ',' << base << ',' << s.mean_cells() << ',' << o.mean_cells() << ',' << pct << '\n';
        if (b == Bucket::overall) summary["fewer_cells_pct"][base] = pct;
      }
    }
  }
  {
    auto out = open_out(ctx, "report.md");
    out << std::fixed;
    out << "| strategy | bucket | count | NMAE |\n|---|---|---:|---:|\n";
    for (const auto& p : pooled)
      for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
        const auto& s = p.buckets[b];
        if (s.n == 0) continue;
        out << "| " << p.strategy << " | " << kBucketNames[b] << " | " << std::setprecision(0) << s.mean_cells()
            << " | " << std::setprecision(4) << s.mean_nmae() << " |\n";
      }
  }
  summary["inputs"] = files.size();
  return finish_run(ctx, "report", summary);
}

const std::vector<PipelineCommand>& pipeline_commands() {
  static const std::vector<PipelineCommand> commands{
      {"synth", "generate a synthetic traffic series", &run_synth},
      {"ingest", "load a timestamp_ms,cell_id,traffic CSV into a series", &run_ingest},
      {"train-mtrnet", "train the reconstruction network", &run_train_mtrnet},
      {"train-agent", "train the selection agent and export its selections", &run_train_agent},
      {"train-policy", "train the selection policy on agent selections", &run_train_policy},
      {"gain-curve", "MAE gain by sampling rate and the quality threshold", &run_gain_curve},
      {"evaluate", "compare spider, random and historical selection on the test split", &run_evaluate},
      {"report", "pool evaluation tables and compute savings", &run_report},
  };
  return commands;
}

}  // namespace spider
