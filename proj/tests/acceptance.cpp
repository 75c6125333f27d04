// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero when
// any criterion fails.
//
// usage: acceptance <spider-cli> <configs-dir> [work-dir]

#include "spider/classic.hpp"
#include "spider/pipeline.hpp"
#include "spider/quality.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

using namespace spider;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
std::map<int, std::string> lines;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

void report(int id, const std::string& name, const Outcome& o, double seconds, double limit) {
  const bool in_time = limit <= 0.0 || seconds < limit;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::ostringstream time;
  time << std::fixed << std::setprecision(1) << seconds << " s";
  if (limit > 0.0) time << " of " << limit << " s";
  std::ostringstream line;
  line << (pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << name << ": " << o.detail << " ["
       << time.str() << "]";
  lines[id] = line.str();
  std::cerr << line.str() << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rows of a CSV with a header line, as string fields keyed by column name.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    return f;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < f.size(); ++i) row[header[i]] = f[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------------------------
// 1

Grid knn_all_pairs(const SparseMeasurement& m, int k_nn) {
  const GridGeometry g = m.geometry();
  Grid out = m.values();
  for (int c = 0; c < g.cells(); ++c) {
    if (m.mask().test(c)) continue;
    std::vector<std::pair<double, int>> all;
    for (int s = 0; s < g.cells(); ++s) {
      if (!m.mask().test(s)) continue;
      const double dr = g.row_of(s) - g.row_of(c), dc = g.col_of(s) - g.col_of(c);
      all.emplace_back(dr * dr + dc * dc, s);
    }
    std::sort(all.begin(), all.end());
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_nn), all.size());
    double num = 0.0, den = 0.0;
    for (std::size_t n = 0; n < k; ++n) {
      const double w = 1.0 / std::sqrt(all[n].first);
      num += w * m.values().data()[all[n].second];
      den += w;
    }
    out.data()[c] = num / den;
  }
  return out;
}

Outcome knn_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GridGeometry g(8, 8);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Grid truth(8, 8);
    for (Eigen::Index k = 0; k < truth.size(); ++k) truth.data()[k] = 100.0 * u(rng);
    const int n = static_cast<int>(std::lround((0.1 + 0.6 * u(rng)) * g.cells()));
    const auto m = apply_mask(TrafficSnapshot(0, truth), random_selection(0, g, n, rng));
    if (knn_s(m, 5).values() == knn_all_pairs(m, 5)) ++exact;
  }
  return {exact == 100, std::to_string(exact) + "/100 instances identical"};
}

// ---------------------------------------------------------------------------------------------
// 2

Outcome cs_recovery() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 16, r = 2;
  Eigen::MatrixXd a(n, r), b(n, r);
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = 0.5 + u(rng);
  for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = 0.5 + u(rng);
  const Grid truth = a * b.transpose();
  const auto m = apply_mask(TrafficSnapshot(0, truth), random_selection(0, GridGeometry(n, n), n * n / 2, rng));
  const CsConfig cfg{r, 1e-3, 20000, 1e-12, 4};
  const auto res = cs_complete(m, cfg);
  const auto& obj = res.detail.objective;
  bool monotone = true;
  for (std::size_t k = 1; k < obj.size(); ++k) monotone = monotone && obj[k] <= obj[k - 1];
  const double rel = (res.estimate.values() - truth).norm() / truth.norm();
  return {monotone && rel < 1e-2, "relative error " + fmt(rel, 3) + ", objective " +
                                       (monotone ? "non-increasing" : "increased") + " over " +
                                       std::to_string(res.detail.iterations) + " sweeps"};
}

// ---------------------------------------------------------------------------------------------
// 3

Outcome gradient_check() {
  nn::ConvNetConfig c;
  c.window_frames = 3;
  c.n_feature_layers = 3;
  c.channels = {2, 3, 3, 4};
  nn::ConvNet<double> net(c, 11);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  nn::Maps<double> x(3, 2, 6, 6);
  for (Eigen::Index k = 0; k < x.data.size(); ++k) x.data.data()[k] = gauss(rng);
  nn::Mat<double> target(1, 2 * 36);
  for (Eigen::Index k = 0; k < target.size(); ++k) target.data()[k] = gauss(rng);

  // Squared error keeps the loss smooth so finite differences are well conditioned.
  auto loss = [&] { return (net.forward(x, nullptr).data - target).squaredNorm() / static_cast<double>(target.size()); };
  nn::ConvNet<double>::Trace trace;
  const auto out = net.forward(x, nullptr, &trace);
  nn::Maps<double> d_out = out;
  d_out.data = 2.0 * (out.data - target) / static_cast<double>(target.size());
  nn::Grads<double> g = net.params().zeros_like();
  net.backward(trace, d_out, g);

  double worst = 0.0;
  const double h = 1e-5;
  auto& params = net.params();
  for (int s = 0; s < 100; ++s) {
    const int p = static_cast<int>(rng() % static_cast<unsigned>(params.size()));
    auto& m = params[p];
    const auto k = static_cast<Eigen::Index>(rng() % static_cast<unsigned long>(m.size()));
    const double keep = m.data()[k];
    m.data()[k] = keep + h;
    const double up = loss();
    m.data()[k] = keep - h;
    const double down = loss();
    m.data()[k] = keep;
    const double numeric = (up - down) / (2 * h), analytic = g[static_cast<std::size_t>(p)].data()[k];
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7}));
  }
  return {worst < 1e-4, "worst relative error " + fmt(worst, 3) + " over 100 parameters"};
}

// ---------------------------------------------------------------------------------------------
// 5

Outcome eta_schedule() {
  bool ok = true;
  for (int k = 1; k <= 64; ++k) {
    ok = ok && eta(k, 0.0) == k;
    int last = k;
    for (double x = 0.0; x <= 50.0; x += 0.5) {
      ok = ok && eta(k, x) <= last;
      last = eta(k, x);
    }
    ok = ok && eta(k, 1e9) == static_cast<int>(std::nearbyint(0.1 * k));
  }
  // With no episodes completed every candidate is a random pick.
  const GridGeometry g(20, 20);
  std::vector<int> all(static_cast<std::size_t>(g.cells()));
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(3);
  const auto c = candidate_subset({10.5, 10.5}, all, g, 16, eta(16, 0.0), rng);
  ok = ok && c.n_random == 16 && c.cells.size() == 16;
  return {ok, "eta(16,0)=" + std::to_string(eta(16, 0.0)) + ", floor " + std::to_string(eta(16, 1e9)) +
                  ", initial candidates random " + std::to_string(c.n_random) + "/16"};
}

// ---------------------------------------------------------------------------------------------
// 8

Outcome bootstrap_centre() {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0.5, 0.1);
  LooObservations obs;
  while (obs.o.size() < 200) {
    const double v = n(rng);
    if (v >= 0.0) obs.o.push_back(v);
  }
  obs.y.assign(obs.o.size(), 0.0);
  obs.y_hat = obs.o;
  obs.cells.resize(obs.o.size());
  std::iota(obs.cells.begin(), obs.cells.end(), 0);
  const double mu = std::accumulate(obs.o.begin(), obs.o.end(), 0.0) / static_cast<double>(obs.o.size());
  const double p = bootstrap_estimate(obs, mu, 10000, 7);
  bool monotone = true;
  double last = 0.0;
  for (double eps = mu - 0.05; eps <= mu + 0.05; eps += 0.0025) {
    const double q = bootstrap_estimate(obs, eps, 10000, 7);
    monotone = monotone && q >= last;
    last = q;
  }
  return {p >= 0.40 && p <= 0.60 && monotone,
          "P(e <= mu) = " + fmt(p, 3) + ", " + (monotone ? "monotone" : "not monotone") + " in epsilon"};
}

// ---------------------------------------------------------------------------------------------
// Desk pipeline

struct Desk {
  fs::path dir;
  std::uint64_t seed = 1;
  std::map<std::string, double> seconds;

  nlohmann::json run(const std::string& command, const std::string& config, const std::string& out) {
    for (const auto& c : pipeline_commands()) {
      if (c.name != command) continue;
      const auto t0 = clock_type::now();
      std::cerr << "  running " << command << " (" << config << ")" << std::endl;
      auto summary = c.run(load_run_context(dir / config, seed, dir / "runs" / out));
      seconds[out] = seconds_since(t0);
      return summary;
    }
    throw std::logic_error("unknown command " + command);
  }
};

Outcome reconstruction_ordering(const Desk& desk) {
  const MtrnetModel model = load_mtrnet(desk.dir / "runs/mtrnet/mtrnet");
  const DatasetSeries raw = load_series(desk.dir / "runs/synth/series.spdr");
  const SeriesSplit parts = split(raw, SplitSpec{7, 3});
  const DatasetSeries test = normalized(parts.test, model.norm);
  const int frames = model.config.window_frames;
  const int n = static_cast<int>(std::lround(0.35 * test.geometry.cells()));

  std::mt19937_64 rng(35);
  std::uniform_int_distribution<std::int64_t> pick(test.first_t() + frames - 1, test.last_t());
  std::vector<StateWindow> windows;
  std::vector<const Grid*> truth;
  for (int j = 0; j < 50; ++j) {
    const std::int64_t t = pick(rng);
    std::vector<SelectionMatrix> masks;
    for (int k = 0; k < frames; ++k) masks.push_back(random_selection(t - frames + 1 + k, test.geometry, n, rng));
    windows.push_back(masked_window(test, t, masks));
    truth.push_back(&test.at(t).values());
  }
  const MtrnetReconstructor mtr(model);
  const KnnReconstructor knn(5);
  const CsReconstructor cs(CsConfig{});
  const StcsReconstructor stcs(StcsConfig{}, frames);
  std::map<std::string, double> med;
  for (const Reconstructor* r : std::initializer_list<const Reconstructor*>{&mtr, &knn, &cs, &stcs}) {
    const auto est = r->reconstruct_batch(windows);
    std::vector<double> errs;
    for (std::size_t j = 0; j < est.size(); ++j) errs.push_back(mae(est[j], *truth[j]));
    med[r->name()] = median(errs);
  }
  const double m = med[mtr.name()], k = med[knn.name()], c = med[cs.name()], s = med[stcs.name()];
  const double reduction = (k - m) / k;
  return {m < s && s <= c && m < k && reduction >= 0.20,
          "median MAE mtrnet " + fmt(m) + ", stcs " + fmt(s) + ", cs " + fmt(c) + ", knn " + fmt(k) + " (" +
              fmt(100 * reduction, 3) + "% below knn)"};
}

struct StepTable {
  std::map<std::string, std::map<std::int64_t, std::pair<double, double>>> by_strategy;  // cells, mae
};

StepTable read_steps(const fs::path& p) {
  StepTable s;
  for (const auto& row : read_csv(p))
    s.by_strategy[row.at("strategy")][std::stoll(row.at("t"))] = {std::stod(row.at("cells")), std::stod(row.at("mae"))};
  return s;
}

Outcome agent_efficiency(const Desk& desk) {
  const auto steps = read_steps(desk.dir / "runs/evaluate/per_step.csv");
  const auto& random = steps.by_strategy.at("random");
  double agent = 0.0, budget = 0.0;
  int n = 0;
  for (const auto& row : read_csv(desk.dir / "runs/evaluate/agent_reference.csv")) {
    const std::int64_t t = std::stoll(row.at("t"));
    agent += std::stod(row.at("iterations"));
    budget += random.at(t).first;
    ++n;
  }
  agent /= n;
  budget /= n;
  const double below = 1.0 - agent / budget;
  return {below >= 0.10, "agent " + fmt(agent) + " cells vs random budget " + fmt(budget) + " over " +
                             std::to_string(n) + " snapshots (" + fmt(100 * below, 3) + "% fewer)"};
}

Outcome policy_fidelity(const Desk& desk) {
  const auto steps = read_steps(desk.dir / "runs/evaluate/per_step.csv");
  const auto& policy = steps.by_strategy.at("spider-policy");
  double agent_mae = 0.0, policy_mae = 0.0, policy_cells = 0.0;
  int n = 0;
  for (const auto& row : read_csv(desk.dir / "runs/evaluate/agent_reference.csv")) {
    const auto& p = policy.at(std::stoll(row.at("t")));
    agent_mae += std::stod(row.at("final_mae"));
    policy_cells += p.first;
    policy_mae += p.second;
    ++n;
  }
  agent_mae /= n;
  policy_mae /= n;
  policy_cells /= n;
  std::ifstream in(desk.dir / "runs/evaluate/summary.json");
  const auto summary = nlohmann::json::parse(in);
  const double latency_ms = summary.at("policy_latency_ms").get<double>();
  const double agent_ms = summary.at("agent").at("ms_per_action").get<double>() * policy_cells;
  const double speedup = agent_ms / latency_ms;
  const double ratio = policy_mae / agent_mae;
  return {ratio <= 1.25 && speedup >= 50.0,
          "policy MAE " + fmt(policy_mae) + " = " + fmt(ratio, 3) + "x agent " + fmt(agent_mae) + "; " +
              fmt(latency_ms, 3) + " ms per snapshot vs " + fmt(agent_ms, 4) + " ms for " + fmt(policy_cells, 3) +
              " agent actions (" + fmt(speedup, 4) + "x)"};
}

Outcome gain_knee(const Desk& desk) {
  const auto rows = read_csv(desk.dir / "runs/gain-knn/gain_curve.csv");
  bool non_increasing = true;
  double pre = 0.0, worst_post = 0.0;
  int n_pre = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    non_increasing = non_increasing && std::stod(rows[i].at("median_mae")) <= std::stod(rows[i - 1].at("median_mae"));
    const double rate = std::stod(rows[i].at("rate")), gain = std::stod(rows[i].at("gain"));
    if (rate <= 0.35 + 1e-9) {
      pre += gain;
      ++n_pre;
    } else {
      worst_post = std::max(worst_post, gain);
    }
  }
  pre /= std::max(1, n_pre);
  return {non_increasing && worst_post < pre, std::string("medians ") +
                                                  (non_increasing ? "non-increasing" : "increase somewhere") +
                                                  ", largest gain past 0.35 " + fmt(worst_post, 3) +
                                                  " vs mean gain up to 0.35 " + fmt(pre, 3)};
}

void bench_ordering(const Desk& desk) {
  std::ifstream in(desk.dir / "runs/evaluate/report.csv");
  std::map<std::string, double> count, nmae;
  for (const auto& r : read_report_csv(in)) {
    count[r.strategy] = r.buckets[overall].mean_cells();
    nmae[r.strategy] = r.buckets[overall].mean_nmae();
  }
  const bool ordered = count["spider-policy"] < count["historical"] && count["historical"] < count["random"];
  std::cout << "INFO      overall cells spider-policy " << fmt(count["spider-policy"]) << " (NMAE "
            << fmt(nmae["spider-policy"]) << "), historical " << fmt(count["historical"]) << " (NMAE "
            << fmt(nmae["historical"]) << "), random " << fmt(count["random"]) << " (NMAE " << fmt(nmae["random"])
            << "): spider < historical < random " << (ordered ? "holds" : "does not hold") << std::endl;
}

// ---------------------------------------------------------------------------------------------
// 10

Outcome cli_determinism(const fs::path& cli, const fs::path& configs, const fs::path& work) {
  const std::vector<std::pair<std::string, std::string>> steps{
      {"synth", "synth.json"},         {"ingest", "ingest.json"},           {"train-mtrnet", "train-mtrnet.json"},
      {"gain-curve", "gain-curve.json"}, {"train-agent", "train-agent.json"}, {"train-policy", "train-policy.json"},
      {"evaluate", "evaluate.json"},   {"report", "report.json"}};
  const std::map<std::string, std::string> out_dir{{"synth", "synth"},   {"ingest", "ingest"},
                                                   {"train-mtrnet", "mtrnet"}, {"gain-curve", "gain"},
                                                   {"train-agent", "agent"}, {"train-policy", "policy"},
                                                   {"evaluate", "evaluate"}, {"report", "report"}};
  for (const char* copy : {"a", "b"}) {
    const fs::path dir = work / copy;
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& e : fs::directory_iterator(configs / "tiny"))
      if (e.is_regular_file()) fs::copy_file(e.path(), dir / e.path().filename());
    for (const auto& [command, config] : steps) {
      const std::string cmd = "\"" + cli.string() + "\" " + command + " \"" + (dir / config).string() +
                              "\" --seed 5 --out-dir \"" + (dir / "out" / out_dir.at(command)).string() + "\" > \"" +
                              (dir / (command + ".log")).string() + "\" 2>&1";
      if (std::system(cmd.c_str()) != 0) return {false, command + " exited with an error, see " + dir.string()};
    }
  }
  int same = 0, differ = 0;
  std::map<std::string, int> per_command;
  for (const auto& e : fs::recursive_directory_iterator(work / "a" / "out")) {
    if (e.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(e.path(), work / "a");
    const bool equal = slurp(e.path()) == slurp(work / "b" / rel);
    (equal ? same : differ) += 1;
    if (!equal) std::cerr << "  differs: " << rel.string() << std::endl;
    per_command[rel.begin()->string() == "out" ? std::next(rel.begin())->string() : rel.string()] += 1;
  }
  const bool all_commands = per_command.size() == steps.size();
  return {differ == 0 && all_commands,
          std::to_string(same) + " CSVs identical, " + std::to_string(differ) + " differ, across " +
              std::to_string(per_command.size()) + "/" + std::to_string(steps.size()) + " subcommands"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <spider-cli> <configs-dir> [work-dir]\n";
    return 2;
  }
  const fs::path cli = fs::absolute(argv[1]);
  const fs::path configs = fs::absolute(argv[2]);
  const fs::path work = argc > 3 ? fs::absolute(argv[3]) : fs::temp_directory_path() / "spider_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  auto timed = [](int id, const std::string& name, double limit, const std::function<Outcome()>& f) {
    const auto t0 = clock_type::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    report(id, name, o, seconds_since(t0), limit);
  };

  timed(1, "knn_s equals the all-pairs reference", 10, knn_oracle);
  timed(2, "cs recovers a rank-2 matrix", 30, cs_recovery);
  timed(3, "mtrnet gradient check", 60, gradient_check);
  timed(5, "exploration schedule", 1, eta_schedule);
  timed(8, "bootstrap estimate at the mean", 10, bootstrap_centre);

  Desk desk;
  desk.dir = work / "desk";
  fs::create_directories(desk.dir);
  bool desk_ok = true;
  try {
    for (const auto& e : fs::directory_iterator(configs / "desk"))
      if (e.path().extension() == ".json") fs::copy_file(e.path(), desk.dir / e.path().filename());
    desk.run("synth", "synth.json", "synth");
    desk.run("train-mtrnet", "train-mtrnet.json", "mtrnet");
  } catch (const std::exception& e) {
    std::cerr << "  desk pipeline failed: " << e.what() << std::endl;
    desk_ok = false;
  }
  {
    const auto t0 = clock_type::now();
    Outcome o;
    try {
      o = desk_ok ? reconstruction_ordering(desk) : Outcome{false, "desk pipeline did not run"};
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double compare = seconds_since(t0);
    o.detail += "; training " + fmt(desk.seconds["mtrnet"], 4) + " s, comparison " + fmt(compare, 3) + " s";
    report(4, "reconstruction ordering at 35%", o, desk.seconds["mtrnet"] + compare, 1200);
  }
  double knee_seconds = 0.0;
  try {
    if (desk_ok) {
      desk.run("gain-curve", "gain-curve-knn.json", "gain-knn");
      knee_seconds = desk.seconds["gain-knn"];
      desk.run("gain-curve", "gain-curve.json", "gain");
      desk.run("train-agent", "train-agent.json", "agent");
      desk.run("train-policy", "train-policy.json", "policy");
      desk.run("evaluate", "evaluate.json", "evaluate");
      desk.run("report", "report.json", "report");
    }
  } catch (const std::exception& e) {
    std::cerr << "  desk pipeline failed: " << e.what() << std::endl;
    desk_ok = false;
  }
  const auto desk_step = [&](std::function<Outcome(const Desk&)> f) {
    return [&desk, &desk_ok, f] { return desk_ok ? f(desk) : Outcome{false, "desk pipeline did not run"}; };
  };
  {
    const auto t0 = clock_type::now();
    Outcome o;
    try {
      o = desk_ok ? agent_efficiency(desk) : Outcome{false, "desk pipeline did not run"};
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    // Agent cost: training episodes plus the reference episodes inside evaluate.
    report(6, "agent needs fewer cells than the random budget", o,
           desk.seconds["agent"] + desk.seconds["evaluate"] + seconds_since(t0), 1800);
  }
  timed(7, "policy fidelity and speed", 0, desk_step(policy_fidelity));
  {
    Outcome o;
    try {
      o = desk_ok ? gain_knee(desk) : Outcome{false, "desk pipeline did not run"};
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    report(9, "knn gain curve flattens past the knee", o, knee_seconds, 300);
  }
  timed(10, "cli reruns are byte-identical", 0, [&] { return cli_determinism(cli, configs, work / "determinism"); });
  std::ofstream saved(work / "acceptance.txt");
  for (const auto& [id, line] : lines) {
    std::cout << line << '\n';
    saved << line << '\n';
  }
  if (desk_ok) {
    try {
      bench_ordering(desk);
    } catch (const std::exception& e) {
      std::cout << "INFO      bench ordering unavailable: " << e.what() << std::endl;
    }
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
