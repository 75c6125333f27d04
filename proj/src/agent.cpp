#include "spider/agent.hpp"

#include "spider/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <cfenv>
#include <cstring>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>

namespace spider {

void AgentConfig::validate(const GridGeometry& geometry) const {
  if (k < 1 || k > geometry.cells()) throw Error(Errc::config, "k must lie in [1, cells]");
  if (net.prev_actions_len < 1) throw Error(Errc::config, "prev_actions_len must be >= 1");
  if (epochs < 0) throw Error(Errc::config, "epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(Errc::config, "learning_rate must be positive");
  if (!(eta_scale > 0.0)) throw Error(Errc::config, "eta_scale must be positive");
  net.validate();
}

AgentModel agent_init(const AgentConfig& config, const GridGeometry& geometry) {
  config.validate(geometry);
  AgentModel m;
  m.config = config;
  m.geometry = geometry;
  m.net = nn::AgentNet<float>(config.net, geometry.rows, geometry.cols, config.seed);
  return m;
}

int eta(int k, double x) {
  if (k < 0 || x < 0.0) throw Error(Errc::domain, "eta needs k >= 0 and x >= 0");
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double v = std::nearbyint(k * (0.1 + 0.9 * std::exp(-x)));
  std::fesetround(saved);
  return static_cast<int>(v);
}

std::vector<int> recent_actions(std::span<const int> selected, int length) {
  std::vector<int> out(static_cast<std::size_t>(length), -1);
  const std::size_t n = std::min(selected.size(), out.size());
  std::copy(selected.end() - static_cast<std::ptrdiff_t>(n), selected.end(), out.end() - static_cast<std::ptrdiff_t>(n));
  return out;
}

namespace {

struct NetInput {
  nn::Maps<float> frame;
  nn::Mat<float> time, prev;
};

NetInput net_input(const AgentModel& model, const SparseMeasurement& frame, const TimeFeatures& time,
                   std::span<const int> prev_actions) {
  const GridGeometry g = frame.geometry();
  if (!(g == model.geometry)) throw Error(Errc::shape, "frame geometry differs from the agent's grid");
  const int len = model.config.net.prev_actions_len;
  if (static_cast<int>(prev_actions.size()) != len)
    throw Error(Errc::shape, "expected " + std::to_string(len) + " previous actions");
  NetInput in{nn::Maps<float>(1, 1, g.rows, g.cols), nn::Mat<float>(3, 1), nn::Mat<float>(len, 1)};
  in.frame.data.row(0) = Eigen::Map<const Eigen::RowVectorXd>(frame.values().data(), g.cells()).cast<float>();
  for (int i = 0; i < 3; ++i) in.time(i, 0) = static_cast<float>(time[static_cast<std::size_t>(i)]);
  const double scale = g.cells() > 1 ? 1.0 / (g.cells() - 1) : 1.0;
  for (int i = 0; i < len; ++i) {
    const int a = prev_actions[static_cast<std::size_t>(i)];
    in.prev(i, 0) = a < 0 ? -1.0f : static_cast<float>(a * scale);
  }
  return in;
}

// The network works in [-1, 1] per axis; grid coordinates span [0, rows) x [0, cols).
double to_grid(float v, int extent) {
  const double x = (static_cast<double>(v) + 1.0) * 0.5 * extent;
  if (!std::isfinite(x)) return x > 0 ? std::nextafter(static_cast<double>(extent), 0.0) : 0.0;
  return std::clamp(x, 0.0, std::nextafter(static_cast<double>(extent), 0.0));
}

PseudoAction decode(const nn::Mat<float>& out, const GridGeometry& g) {
  if (!out.allFinite()) return {g.rows * 0.5, g.cols * 0.5};
  return {to_grid(out(0, 0), g.rows), to_grid(out(1, 0), g.cols)};
}

nn::Mat<float> center_target(int cell, const GridGeometry& g) {
  nn::Mat<float> t(2, 1);
  t(0, 0) = static_cast<float>(2.0 * (cell / g.cols + 0.5) / g.rows - 1.0);
  t(1, 0) = static_cast<float>(2.0 * (cell % g.cols + 0.5) / g.cols - 1.0);
  return t;
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

}  // namespace

PseudoAction pseudo_action(const AgentModel& model, const SparseMeasurement& frame, const TimeFeatures& time,
                           std::span<const int> prev_actions) {
  const NetInput in = net_input(model, frame, time, prev_actions);
  return decode(model.net.forward(in.frame, in.time, in.prev), model.geometry);
}

double pseudo_action_loss(const PseudoAction& a_hat, int cell, const GridGeometry& g) {
  if (!g.contains(cell)) throw Error(Errc::range, "cell " + std::to_string(cell) + " is off the grid");
  const double dr = 2.0 * (a_hat.row - (cell / g.cols + 0.5)) / g.rows;
  const double dc = 2.0 * (a_hat.col - (cell % g.cols + 0.5)) / g.cols;
  return dr * dr + dc * dc;
}

CandidateSet candidate_subset(const PseudoAction& a_hat, std::span<const int> available, const GridGeometry& g, int k,
                              int n_random, std::mt19937_64& rng) {
  if (available.empty()) throw Error(Errc::empty_input, "no available cells");
  if (k < 1 || n_random < 0 || n_random > k) throw Error(Errc::config, "candidate subset needs 0 <= n_random <= k, k >= 1");
  CandidateSet out;
  if (static_cast<int>(available.size()) <= k) {
    out.cells.assign(available.begin(), available.end());
    return out;
  }
  const auto dist2 = [&](int c) {
    const double dr = c / g.cols + 0.5 - a_hat.row, dc = c % g.cols + 0.5 - a_hat.col;
    return dr * dr + dc * dc;
  };
  std::vector<int> order(available.begin(), available.end());
  const auto n_near = static_cast<std::ptrdiff_t>(k - n_random);
  std::partial_sort(order.begin(), order.begin() + n_near, order.end(), [&](int a, int b) {
    const double da = dist2(a), db = dist2(b);
    return da != db ? da < db : a < b;
  });
  out.cells.assign(order.begin(), order.begin() + n_near);
  std::vector<char> taken(static_cast<std::size_t>(g.cells()), 0);
  for (int c : out.cells) taken[static_cast<std::size_t>(c)] = 1;
  std::uniform_int_distribution<std::size_t> pick(0, available.size() - 1);
  while (out.n_random < n_random) {
    const int c = available[pick(rng)];
    if (taken[static_cast<std::size_t>(c)]) continue;
    taken[static_cast<std::size_t>(c)] = 1;
    out.cells.push_back(c);
    ++out.n_random;
  }
  return out;
}

Scored select_action(const CandidateSet& candidates, const EnvState& state, const Environment& env) {
  if (candidates.cells.empty()) throw Error(Errc::empty_input, "no candidates to score");
  std::vector<StateWindow> windows;
  windows.reserve(candidates.cells.size());
  for (int c : candidates.cells) windows.push_back(env.apply(state, c).window);
  const std::vector<Grid> est = env.reconstructor().reconstruct_batch(windows);
  const Grid& truth = env.truth(state.t).values();
  Scored out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < est.size(); ++j) {
    out.mae.push_back(mae(est[j], truth));
    const int c = candidates.cells[j];
    if (out.mae.back() < best || (out.mae.back() == best && c < out.cell)) {
      best = out.mae.back();
      out.cell = c;
    }
  }
  return out;
}

AgentTraining train_agent(AgentModel& model, Environment& env, std::span<const std::int64_t> timestamps) {
  const AgentConfig& cfg = model.config;
  cfg.validate(model.geometry);
  if (!(env.series().geometry == model.geometry)) throw Error(Errc::shape, "environment and agent grids differ");
  if (timestamps.empty()) throw Error(Errc::empty_input, "no training timestamps");
  nn::Adam<float> opt(cfg.learning_rate);
  AgentTraining result;
  std::mt19937_64 rng = derived_rng(cfg.seed, 0xa6e7);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    long steps = 0;
    for (const std::int64_t t : timestamps) {
      EnvState s = env.reset(t, cfg.seed ^ static_cast<std::uint64_t>(t));
      EpisodeLog log;
      log.t = t;
      const int n_random = eta(cfg.k, cfg.eta_scale * static_cast<double>(result.episodes));
      for (;;) {
        const auto space = env.action_space(s);
        const auto prev = recent_actions(s.selected, cfg.net.prev_actions_len);
        const NetInput in = net_input(model, s.current(), s.time, prev);
        nn::AgentNet<float>::Trace trace;
        const nn::Mat<float> out = model.net.forward(in.frame, in.time, in.prev, &trace);
        const CandidateSet cands = candidate_subset(decode(out, model.geometry), space, model.geometry, cfg.k,
                                                    std::min(n_random, cfg.k), rng);
        const Scored pick = select_action(cands, s, env);
        const nn::Mat<float> diff = out - center_target(pick.cell, model.geometry);
        loss_sum += static_cast<double>(diff.squaredNorm());
        ++steps;
        nn::Grads<float> grads = model.net.params().zeros_like();
        model.net.backward(trace, (2.0f * diff).eval(), grads);
        opt.step(model.net.params(), grads);

        const auto idx = std::find(cands.cells.begin(), cands.cells.end(), pick.cell) - cands.cells.begin();
        StepResult r = env.advance(s, pick.cell, pick.mae[static_cast<std::size_t>(idx)]);
        log.actions.push_back(pick.cell);
        log.rewards.push_back(r.reward);
        log.final_mae = r.mae;
        log.truncated = r.truncated;
        s = std::move(r.next_state);
        if (r.done) break;
      }
      log.iterations = static_cast<int>(log.actions.size());
      log.final_selection = s.current().mask();
      env.commit(log);
      ++result.episodes;
      if (epoch == cfg.epochs) result.logs.push_back(std::move(log));
    }
    result.epoch_loss.push_back(steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0);
  }
  return result;
}

EpisodeLog run_agent_episode(const AgentModel& model, const Environment& env, std::int64_t t, std::uint64_t seed) {
  const AgentConfig& cfg = model.config;
  std::mt19937_64 rng = derived_rng(seed, static_cast<std::uint64_t>(t), 0xe7a1);
  const int n_random = eta(cfg.k, std::numeric_limits<double>::infinity());
  EnvState s = env.reset(t, seed ^ static_cast<std::uint64_t>(t));
  EpisodeLog log;
  log.t = t;
  for (;;) {
    const auto prev = recent_actions(s.selected, cfg.net.prev_actions_len);
    const PseudoAction a = pseudo_action(model, s.current(), s.time, prev);
    const CandidateSet cands = candidate_subset(a, env.action_space(s), model.geometry, cfg.k, n_random, rng);
    const Scored pick = select_action(cands, s, env);
    const auto idx = std::find(cands.cells.begin(), cands.cells.end(), pick.cell) - cands.cells.begin();
    StepResult r = env.advance(s, pick.cell, pick.mae[static_cast<std::size_t>(idx)]);
    log.actions.push_back(pick.cell);
    log.rewards.push_back(r.reward);
    log.final_mae = r.mae;
    log.truncated = r.truncated;
    s = std::move(r.next_state);
    if (r.done) break;
  }
  log.iterations = static_cast<int>(log.actions.size());
  log.final_selection = s.current().mask();
  return log;
}

std::vector<SelectionSample> export_selection_dataset(std::span<const EpisodeLog> logs, const DatasetSeries& series,
                                                      int window_frames) {
  if (logs.empty()) throw Error(Errc::empty_input, "no episode logs to export");
  if (window_frames < 1) throw Error(Errc::config, "window_frames must be >= 1");
  const GridGeometry& g = series.geometry;
  std::unordered_map<std::int64_t, const EpisodeLog*> by_t;
  for (const auto& log : logs) by_t[log.t] = &log;
  const auto quantized = [](const SparseMeasurement& m) {
    return SparseMeasurement(m.values().cast<float>().cast<double>(), m.mask());
  };
  std::vector<SelectionSample> out;
  out.reserve(logs.size());
  for (const auto& log : logs) {
    std::vector<SparseMeasurement> frames;
    for (std::int64_t k = log.t - window_frames + 1; k < log.t; ++k) {
      const auto it = by_t.find(k);
      frames.push_back(it != by_t.end() && series.has(k) ? quantized(apply_mask(series.at(k), it->second->final_selection))
                                                         : SparseMeasurement::empty(k, g));
    }
    frames.push_back(SparseMeasurement::empty(log.t, g));
    out.push_back({StateWindow(std::move(frames)), log.final_selection, time_features(series.time_info(log.t))});
  }
  return out;
}

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i], b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0,
                        b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kB64[v & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  if (text.size() % 4 != 0) throw Error(Errc::io, "base64 text length is not a multiple of 4");
  std::vector<unsigned char> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char ch = text[i + static_cast<std::size_t>(j)];
      if (ch == '=' && i + 4 == text.size() && j >= 2) {
        v[j] = 0;
        ++pad;
        continue;
      }
      v[j] = lut[static_cast<unsigned char>(ch)];
      if (v[j] < 0 || pad > 0) throw Error(Errc::io, "invalid base64 text");
    }
    const std::uint32_t w = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                            (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
    out.push_back(static_cast<unsigned char>(w >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>(w >> 8));
    if (pad < 1) out.push_back(static_cast<unsigned char>(w));
  }
  return out;
}

std::string encode_floats(const std::vector<float>& values) {
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 4);
  for (float f : values) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int s = 0; s < 32; s += 8) bytes.push_back(static_cast<unsigned char>(u >> s));
  }
  return base64_encode(bytes);
}

std::vector<float> decode_floats(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw Error(Errc::io, "float payload is not a multiple of 4 bytes");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int s = 0; s < 4; ++s) u |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(s)]) << (8 * s);
    std::memcpy(&out[i], &u, 4);
  }
  return out;
}

}  // namespace

void write_selection_dataset(std::ostream& out, std::span<const SelectionSample> samples) {
  for (const auto& s : samples) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : s.window.frames()) {
      const auto cells = f.mask().cells();
      std::vector<float> values;
      for (int c : cells) values.push_back(static_cast<float>(f.values().data()[c]));
      frames.push_back({{"t", f.t()}, {"cells", cells}, {"values", encode_floats(values)}});
    }
    const GridGeometry g = s.label.geometry();
    const nlohmann::json rec = {{"t", s.label.t()},   {"rows", g.rows},  {"cols", g.cols},
                                {"time", s.time},     {"label", s.label.cells()},
                                {"frames", frames}};
    out << rec.dump() << '\n';
  }
}

std::vector<SelectionSample> read_selection_dataset(std::istream& in) {
  std::vector<SelectionSample> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const GridGeometry g(j.at("rows").get<int>(), j.at("cols").get<int>());
      std::vector<SparseMeasurement> frames;
      for (const auto& f : j.at("frames")) {
        const auto t = f.at("t").get<std::int64_t>();
        const auto cells = f.at("cells").get<std::vector<int>>();
        const auto values = decode_floats(f.at("values").get<std::string>());
        if (values.size() != cells.size()) throw Error(Errc::io, "frame cell and value counts differ");
        Grid v = Grid::Zero(g.rows, g.cols);
        const SelectionMatrix mask = SelectionMatrix::from_cells(t, g, cells);
        for (std::size_t k = 0; k < cells.size(); ++k) v.data()[cells[k]] = values[k];
        frames.emplace_back(std::move(v), mask);
      }
      out.push_back({StateWindow(std::move(frames)),
                     SelectionMatrix::from_cells(j.at("t").get<std::int64_t>(), g, j.at("label").get<std::vector<int>>()),
                     j.at("time").get<TimeFeatures>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::io, "selection record on line " + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::io, "selection record on line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void save_agent(const std::filesystem::path& stem, const AgentModel& model) {
  const auto& n = model.config.net;
  Checkpoint c;
  c.manifest = {{"kind", "agent"},
                {"rows", model.geometry.rows},
                {"cols", model.geometry.cols},
                {"k", model.config.k},
                {"seed", model.config.seed},
                {"epochs", model.config.epochs},
                {"learning_rate", model.config.learning_rate},
                {"eta_scale", model.config.eta_scale},
                {"net",
                 {{"conv1", n.conv1},
                  {"conv2", n.conv2},
                  {"reduce", n.reduce},
                  {"hidden", n.hidden},
                  {"prev_actions_len", n.prev_actions_len},
                  {"pool_factor", n.pool_factor},
                  {"lrelu_slope", n.lrelu_slope}}}};
  c.params = model.net.params();
  save_checkpoint(stem, c);
}

AgentModel load_agent(const std::filesystem::path& stem) {
  Checkpoint c = load_checkpoint(stem);
  const auto& m = c.manifest;
  if (m.value("kind", "") != "agent") throw Error(Errc::io, stem.string() + " is not an agent checkpoint");
  AgentConfig cfg;
  cfg.k = m.at("k").get<int>();
  cfg.seed = m.at("seed").get<std::uint64_t>();
  cfg.epochs = m.at("epochs").get<int>();
  cfg.learning_rate = m.at("learning_rate").get<double>();
  cfg.eta_scale = m.at("eta_scale").get<double>();
  const auto& n = m.at("net");
  cfg.net.conv1 = n.at("conv1").get<int>();
  cfg.net.conv2 = n.at("conv2").get<int>();
  cfg.net.reduce = n.at("reduce").get<int>();
  cfg.net.hidden = n.at("hidden").get<int>();
  cfg.net.prev_actions_len = n.at("prev_actions_len").get<int>();
  cfg.net.pool_factor = n.at("pool_factor").get<int>();
  cfg.net.lrelu_slope = n.at("lrelu_slope").get<double>();
  AgentModel model = agent_init(cfg, GridGeometry(m.at("rows").get<int>(), m.at("cols").get<int>()));
  model.net.set_params(std::move(c.params));
  return model;
}

}  // namespace spider
