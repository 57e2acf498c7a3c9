#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "socdim/pipeline.hpp"
#include "socdim/synth.hpp"

namespace fs = std::filesystem;
using namespace socdim;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::string> order = config_keys();

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    for (const auto& k : order) app->add_option("--" + k, values[k], "override config key " + k);
  }

  PipelineConfig resolve(CLI::App* app) const {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    for (const auto& k : order)
      if (app->count("--" + k) > 0) set_config_value(cfg, k, values.at(k));
    return cfg;
  }
};

void print_result(const PipelineResult& r, const PipelineConfig& cfg) {
  for (const auto& [k, v] : r.counts) std::cout << k << "=" << v << "\n";
  for (const auto& nr : r.regressions)
    std::cout << "r2_adj." << nr.model << "=" << format_fixed(nr.report.r2_adj, 4) << "\n";
  if (r.stepaic) std::cout << "stepaic.selected=" << detail::join(r.stepaic->selected, ',') << "\n";
  std::cout << "outputs=" << cfg.output_dir << "\n";
}

SynthDimension parse_dimension(const std::string& s) {
  const auto parts = detail::split(s, ':');
  if (parts.size() != 3) throw InputError("--dimension expects name:base_rate:coupling");
  SynthDimension d;
  d.name = parts[0];
  d.base_rate = detail::to_double("base_rate", parts[1]);
  d.coupling = detail::to_double("coupling", parts[2]);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dimension-specific communication graphs, diversity and regression reports"};
  app.require_subcommand(1);

  struct PipelineCommand {
    const char* name;
    const char* help;
    Stage stage;
    CLI::App* app = nullptr;
    ConfigFlags flags;
  };
  std::vector<PipelineCommand> commands;
  commands.reserve(7);
  commands.push_back({"ingest", "parse inputs, geo-reference users, filter areas", Stage::kIngest, nullptr, {}});
  commands.push_back({"label", "compute dimension thresholds and message labels", Stage::kLabel, nullptr, {}});
  commands.push_back({"build", "build the full and dimension-specific graphs", Stage::kBuild, nullptr, {}});
  commands.push_back({"diversity", "social and spatial diversity per user and area", Stage::kDiversity, nullptr, {}});
  commands.push_back({"span", "geographic span and null-model delta p", Stage::kSpan, nullptr, {}});
  commands.push_back({"regress", "area regressions and backward stepwise AIC", Stage::kRegress, nullptr, {}});
  commands.push_back({"run", "full pipeline", Stage::kAll, nullptr, {}});
  for (auto& c : commands) {
    c.app = app.add_subcommand(c.name, c.help);
    c.flags.attach(c.app);
  }

  auto* sweep_cmd = app.add_subcommand("sweep", "adjusted R2 per value of one parameter");
  ConfigFlags sweep_flags;
  sweep_flags.attach(sweep_cmd);
  std::string sweep_param, sweep_values, sweep_out;
  sweep_cmd->add_option("--parameter", sweep_param, "min_weight | alpha | n_min | window")->required();
  sweep_cmd->add_option("--values", sweep_values,
                        "comma-separated values; window values are start:end")->required();
  sweep_cmd->add_option("--out", sweep_out, "output CSV (default <output_dir>/sweep.csv)");

  auto* base_cmd = app.add_subcommand("baseline", "adjusted R2 of diversity on random message samples");
  ConfigFlags base_flags;
  base_flags.attach(base_cmd);
  std::string base_out;
  base_cmd->add_option("--out", base_out, "output CSV (default <output_dir>/baseline.csv)");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus and a matching config");
  SynthConfig sc;
  std::string synth_out;
  std::vector<std::string> synth_dims, synth_betas;
  bool zero_heavy = false;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", sc.seed, "generator seed");
  synth_cmd->add_option("--areas", sc.areas, "number of areas");
  synth_cmd->add_option("--grid-spacing", sc.grid_spacing_deg, "grid spacing in degrees");
  synth_cmd->add_option("--users-per-area", sc.users_per_area, "users in the smallest area");
  synth_cmd->add_option("--users-step", sc.users_per_area_step, "extra users per area step");
  synth_cmd->add_option("--contacts", sc.contacts_per_user, "expected contacts per user");
  synth_cmd->add_option("--messages-per-contact", sc.messages_per_contact, "expected messages per contact");
  synth_cmd->add_option("--local-fraction", sc.local_fraction, "share of same-area contacts");
  synth_cmd->add_option("--heterogeneity", sc.heterogeneity, "per-area label propensity spread");
  synth_cmd->add_option("--coupling-scale", sc.coupling_scale_km, "distance scale of coupling in km");
  synth_cmd->add_option("--dimension", synth_dims, "name:base_rate:coupling (repeatable)");
  synth_cmd->add_option("--intercept", sc.outcome.intercept, "planted outcome intercept");
  synth_cmd->add_option("--beta", synth_betas, "feature=beta for the planted outcome (repeatable)");
  synth_cmd->add_option("--sigma", sc.outcome.sigma, "planted outcome noise sd");
  synth_cmd->add_flag("--zero-distance-heavy", zero_heavy, "many same-area contacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto& c : commands) {
      if (!c.app->parsed()) continue;
      const auto cfg = c.flags.resolve(c.app);
      print_result(run_pipeline(cfg, c.stage), cfg);
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto cfg = sweep_flags.resolve(sweep_cmd);
      const auto rows = sweep(cfg, sweep_param, detail::split(sweep_values, ','));
      const fs::path out = sweep_out.empty() ? fs::path(cfg.output_dir) / "sweep.csv" : fs::path(sweep_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      std::ofstream f(out, std::ios::binary);
      if (!f) throw InputError("cannot write " + out.string());
      write_sweep(rows, f);
      write_sweep(rows, std::cout);
      return 0;
    }
    if (base_cmd->parsed()) {
      const auto cfg = base_flags.resolve(base_cmd);
      const auto rows = random_baseline(cfg);
      const fs::path out = base_out.empty() ? fs::path(cfg.output_dir) / "baseline.csv" : fs::path(base_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      std::ofstream f(out, std::ios::binary);
      if (!f) throw InputError("cannot write " + out.string());
      write_baseline(rows, f);
      write_baseline(rows, std::cout);
      return 0;
    }
    if (synth_cmd->parsed()) {
      if (zero_heavy) sc = zero_distance_heavy(sc);
      if (!synth_dims.empty()) {
        sc.dimensions.clear();
        for (const auto& d : synth_dims) sc.dimensions.push_back(parse_dimension(d));
      }
      for (const auto& b : synth_betas) {
        const auto eq = b.find('=');
        if (eq == std::string::npos) throw InputError("--beta expects feature=value");
        sc.outcome.betas.emplace_back(b.substr(0, eq), detail::to_double("beta", b.substr(eq + 1)));
      }
      const auto corpus = generate_corpus(sc);
      write_corpus(corpus, synth_out);

      PipelineConfig cfg;
      cfg.messages = "messages.csv";
      cfg.activity = "activity.csv";
      cfg.areas = "areas.csv";
      cfg.output_dir = "out";
      cfg.alpha = corpus.alphas.front();
      cfg.min_weight = 1;
      cfg.min_users = 1;
      cfg.null_runs = 20;
      cfg.seed = sc.seed;
      std::ofstream f(fs::path(synth_out) / "pipeline.conf", std::ios::binary);
      f << "# synthetic corpus, seed " << sc.seed << "\n" << serialize_config(cfg);
      std::cout << "messages=" << corpus.messages.size() << "\nusers=" << corpus.users.size()
                << "\nareas=" << corpus.areas.size() << "\n";
      for (std::size_t d = 0; d < corpus.labeled.size(); ++d)
        std::cout << "labeled." << sc.dimensions[d].name << "=" << corpus.labeled[d] << "\n";
      if (std::adjacent_find(corpus.alphas.begin(), corpus.alphas.end(),
                             std::not_equal_to<>()) != corpus.alphas.end())
        std::cerr << "warning: base rates differ; pipeline.conf uses the first dimension's alpha\n";
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
