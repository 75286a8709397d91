// Copyright 2026 The dpcd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line runner for the experiments. Each subcommand writes
// <output>/<name>.csv, <name>_agents.csv and <name>_summary.txt.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "dpcd/dpcd.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dpcd;

struct Options {
  std::size_t n = 100;
  std::size_t p = 10;
  double gamma = 0.1;
  double mu = 0.0;
  std::vector<double> eps_bar;
  double delta_bar = std::exp(-5.0);
  std::size_t ticks = 0;
  std::size_t updates = 0;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> warm_starts;
  std::string allocation = "uniform";
  std::string mechanism = "laplace";
  std::string output = "results";
  bool noisy_test_labels = false;
  std::string ratings;
  std::string features;
  std::size_t knn = 10;
  std::size_t feature_dim = 20;
  double clip = kDefaultClip;
  bool private_bounds = false;
};

ExperimentConfig to_config(const Options& o) {
  ExperimentConfig c;
  c.agents = o.n;
  c.dimension = o.p;
  c.gamma = o.gamma;
  c.mu = o.mu;
  if (o.ticks > 0) c.total_ticks = o.ticks;
  c.updates_per_agent = o.updates;
  c.delta_bar = o.delta_bar;
  c.seeds = o.seeds;
  c.noisy_test_labels = o.noisy_test_labels;
  if (!o.eps_bar.empty()) {
    c.epsilon_bars = o.eps_bar;
    c.recsys_epsilons = o.eps_bar;
  }
  if (!o.warm_starts.empty()) {
    c.private_warm_starts.clear();
    for (const auto& w : o.warm_starts) c.private_warm_starts.push_back(parse_warm_start(w));
  }
  c.allocation = parse_allocation(o.allocation);
  c.private_mode = o.mechanism == "gaussian" ? RunMode::kPrivateGaussian : RunMode::kPrivateLaplace;
  c.ratings_path = o.ratings;
  c.features_path = o.features;
  c.knn = o.knn;
  c.feature_dimension = o.feature_dim;
  c.clip = o.clip;
  if (o.mu > 0.0) c.recsys_mu = o.mu;
  if (o.updates > 0) c.recsys_updates_per_agent = o.updates;
  return c;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void write_report(const ExperimentReport& r, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path base = fs::path(dir) / r.name;
  {
    auto out = open_out(base.string() + ".csv");
    write_report_csv(out, r);
  }
  {
    auto out = open_out(base.string() + "_agents.csv");
    write_agents_csv(out, r);
  }
  {
    auto out = open_out(base.string() + "_summary.txt");
    write_summary(out, r, true);
  }
  write_summary(std::cout, r, true);
}

void write_bounds(const std::vector<BoundsCheckRow>& rows, const BoundsCheckConfig& c,
                  const std::string& dir) {
  fs::create_directories(dir);
  const fs::path base = fs::path(dir) / "bounds-check";
  {
    auto out = open_out(base.string() + ".csv");
    write_bounds_csv(out, rows);
  }
  auto out = open_out(base.string() + "_summary.txt");
  for (std::ostream* os : {static_cast<std::ostream*>(&out), static_cast<std::ostream*>(&std::cout)}) {
    *os << "experiment=bounds-check\n"
        << "config.n=" << c.agents << "\nconfig.p=" << c.dimension << "\nconfig.mu=" << c.mu
        << "\nconfig.runs=" << c.runs << "\nconfig.private=" << (c.private_run ? "true" : "false")
        << '\n';
    for (const auto& r : rows) {
      const double bound = c.private_run ? std::max(r.utility_printed, r.utility_derivation) : r.nonprivate_bound;
      *os << "result.T=" << r.tick << ".mean_gap=" << r.mean_gap << '\n'
          << "result.T=" << r.tick << ".bound=" << bound << '\n'
          << "result.T=" << r.tick << ".holds="
          << (r.mean_gap <= bound + 3.0 * r.standard_error ? "true" : "false") << '\n';
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized private coordinate descent experiments"};
  app.set_config("--config", "", "INI/TOML file with option values");
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed,--seeds", o.seeds, "Seeds, one run per seed");
    sub->add_option("--output", o.output, "Output directory");
    sub->add_option("--delta-bar", o.delta_bar, "Per-agent delta budget");
    sub->add_option("--eps-bar", o.eps_bar, "Per-agent epsilon budgets");
    sub->add_option("--T-i,--updates-per-agent", o.updates,
                    "Private updates per agent (0 tunes on validation)");
    sub->add_option("--mechanism", o.mechanism, "Noise mechanism")
        ->check(CLI::IsMember({"laplace", "gaussian"}));
    sub->add_option("--mu", o.mu, "Trade-off parameter (0 tunes on validation)");
    sub->add_option("--T", o.ticks, "Total non-private ticks (0 picks 100 n)");
  };
  auto add_synthetic = [&](CLI::App* sub) {
    add_common(sub);
    sub->add_option("--n", o.n, "Number of agents");
    sub->add_option("--p", o.p, "Feature dimension");
    sub->add_option("--gamma", o.gamma, "Angle-graph bandwidth");
    sub->add_flag("--noisy-test-labels", o.noisy_test_labels, "Evaluate on flipped test labels");
  };

  auto* conv = app.add_subcommand("synth-convergence", "Non-private CD vs local models");
  add_synthetic(conv);
  auto* priv = app.add_subcommand("synth-private", "Private CD over the budget grid");
  add_synthetic(priv);
  priv->add_option("--warm-start", o.warm_starts, "Warm starts for private runs")
      ->check(CLI::IsMember({"zeros", "constant", "local-models", "private-propagation"}));
  priv->add_option("--allocation", o.allocation, "Budget allocation")
      ->check(CLI::IsMember({"uniform", "optimal"}));
  auto* ldp = app.add_subcommand("local-dp", "Local models on locally perturbed data");
  add_synthetic(ldp);
  auto* rec = app.add_subcommand("recsys", "Per-user rating models");
  add_common(rec);
  rec->add_option("--ratings", o.ratings, "Ratings file in u.data format")->required();
  rec->add_option("--features", o.features, "Item feature CSV (fallback features if omitted)");
  rec->add_option("--knn", o.knn, "Neighbors per user in the similarity graph");
  rec->add_option("--feature-dim", o.feature_dim, "Fallback feature dimension");
  rec->add_option("--clip", o.clip, "Per-point gradient clip (L1)");
  auto* bounds = app.add_subcommand("bounds-check", "Monte-Carlo check of the convergence bounds");
  BoundsCheckConfig bc;
  bounds->add_option("--n", bc.agents, "Number of agents");
  bounds->add_option("--p", bc.dimension, "Dimension");
  bounds->add_option("--mu", bc.mu, "Trade-off parameter");
  bounds->add_option("--runs", bc.runs, "Monte-Carlo runs");
  bounds->add_option("--eps-bar", o.eps_bar, "Per-agent budget (private check)");
  bounds->add_option("--T-i,--updates-per-agent", o.updates, "Updates per agent for the budget split");
  bounds->add_flag("--private", o.private_bounds, "Check the private bound with Laplace noise");
  bounds->add_option("--seed", o.seeds, "Instance seed (first value used)");
  bounds->add_option("--output", o.output, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig c = to_config(o);
    if (*conv) {
      write_report(exp_nonprivate_convergence(c), o.output);
    } else if (*priv) {
      write_report(exp_private_tradeoff(c), o.output);
    } else if (*ldp) {
      write_report(exp_local_dp_baseline(c), o.output);
    } else if (*rec) {
      write_report(exp_recommendation(c), o.output);
    } else if (*bounds) {
      bc.private_run = o.private_bounds;
      if (!o.eps_bar.empty()) bc.epsilon_bar = o.eps_bar.front();
      if (o.updates > 0) bc.updates_per_agent = o.updates;
      if (!o.seeds.empty()) bc.seed = o.seeds.front();
      write_bounds(run_bounds_check(bc), bc, o.output);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
