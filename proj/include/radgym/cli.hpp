#pragma once

// Command-line front end. Lives in a header so tests can drive whole
// pipelines in-process; tools/radgym.cpp is a thin main().
//
// Settings resolve as: command-line flag, then RADGYM_<NAME> environment
// variable, then the --config YAML file, then the built-in default.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include "radgym/bridge.hpp"
#include "radgym/error.hpp"
#include "radgym/llm.hpp"
#include "radgym/pacs.hpp"
#include "radgym/phantom.hpp"
#include "radgym/runner.hpp"
#include "radgym/scoring.hpp"
#include "radgym/tasks.hpp"

namespace radgym::cli {

namespace fs = std::filesystem;

/// String-valued settings with layered resolution.
class Settings {
 public:
  CLI::Option* add(CLI::App& app, const std::string& name, std::string fallback, const std::string& help) {
    values_[name] = std::move(fallback);
    auto* opt = app.add_option("--" + name, values_[name], help);
    options_[name].push_back(opt);
    return opt;
  }

  void resolve(const std::string& config_path) {
    YAML::Node config;
    if (!config_path.empty()) {
      try {
        config = YAML::LoadFile(config_path);
      } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::ParseError, "config " + config_path + ": " + e.what());
      }
    }
    for (auto& [name, value] : values_) {
      const auto& opts = options_.at(name);
      if (std::any_of(opts.begin(), opts.end(), [](const CLI::Option* o) { return o->count() > 0; })) continue;
      std::string env = "RADGYM_" + name;
      for (auto& c : env) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (const char* v = std::getenv(env.c_str())) {
        value = v;
      } else if (config && config[name]) {
        value = config[name].as<std::string>();
      }
    }
  }

  const std::string& str(const std::string& name) const { return values_.at(name); }
  long long integer(const std::string& name) const {
    try {
      return std::stoll(str(name));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--" + name, "expected an integer, got '" + str(name) + "'");
    }
  }
  double number(const std::string& name) const {
    try {
      return std::stod(str(name));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--" + name, "expected a number, got '" + str(name) + "'");
    }
  }
  std::string required(const std::string& name) const {
    if (str(name).empty()) throw CLI::RequiredError("--" + name);
    return str(name);
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::vector<CLI::Option*>> options_;  // one per subcommand using the name
};

struct Loaded {
  std::shared_ptr<const pacs::Store> store;
  std::shared_ptr<const phantom::TruthCatalog> truth;
  tools::Environment env() const { return {store, truth}; }
};

inline Loaded load(const std::string& archive) {
  Loaded l;
  l.store = std::make_shared<const pacs::Store>(pacs::load_archive(archive));
  l.truth = std::make_shared<const phantom::TruthCatalog>(phantom::load_truth(archive));
  return l;
}

inline std::vector<scoring::ScoreCard> read_scores_csv(const std::string& text) {
  std::vector<scoring::ScoreCard> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 12) throw Error(ErrorCode::ParseError, "scores.csv row has " + std::to_string(f.size()) + " fields");
    scoring::ScoreCard c;
    c.task_id = f[0];
    c.task_type = f[1];
    c.tier = f[2];
    c.P = std::stod(f[3]);
    c.E = std::stod(f[4]);
    c.O = std::stod(f[5]);
    c.S = std::stod(f[6]);
    c.execution.A_tool = std::stod(f[7]);
    c.execution.Q_param = std::stod(f[8]);
    c.execution.E_turn = std::stod(f[9]);
    c.execution.R_err = std::stod(f[10]);
    c.termination = f[11];
    out.push_back(std::move(c));
  }
  return out;
}

/// Scores every trajectory of a run directory; writes scores.csv and report.txt.
inline scoring::Report score_run(const std::string& archive, const std::string& suite_dir, const std::string& run_dir,
                                 const std::string& out_dir) {
  auto l = load(archive);
  auto suite = tasks::load_suite(suite_dir);
  std::vector<scoring::ScoreCard> cards;
  for (const auto& t : suite) {
    auto file = fs::path(run_dir) / "trajectories" / (t.task_id + ".jsonl");
    if (!fs::exists(file)) continue;  // reported as MissingScorecard below
    cards.push_back(scoring::score_task(t, runner::read_trajectory(file), *l.truth));
  }
  auto report = scoring::composite_and_report(cards, suite);
  fs::create_directories(out_dir);
  phantom::write_text(fs::path(out_dir) / "scores.csv", scoring::scores_csv(cards));
  phantom::write_text(fs::path(out_dir) / "report.txt", scoring::report_text(report));
  return report;
}

inline int run_command(int argc, const char* const* argv, std::istream& in = std::cin, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Radiology agent benchmark environment: phantoms, tasks, episodes and scoring.", "radgym"};
  app.require_subcommand(1);
  std::string config;
  app.add_option("--config", config, "YAML file with default settings (keys are flag names)");
  Settings s;

  auto* phantom_cmd = app.add_subcommand("phantom", "Synthetic DICOM archives");
  phantom_cmd->require_subcommand(1);
  auto* phantom_gen = phantom_cmd->add_subcommand("gen", "Generate a phantom archive with ground truth");
  s.add(*phantom_gen, "seed", "7", "Random seed");
  s.add(*phantom_gen, "out", "", "Output archive directory");
  s.add(*phantom_gen, "ct", "4", "CT nodule families");
  s.add(*phantom_gen, "mr", "4", "Breast MRI families");
  s.add(*phantom_gen, "longitudinal", "4", "Baseline/follow-up CT families");
  s.add(*phantom_gen, "size", "128", "Rows and columns of CT slices");
  s.add(*phantom_gen, "slices", "40", "CT slices per study");

  auto* tasks_cmd = app.add_subcommand("tasks", "Task suites");
  tasks_cmd->require_subcommand(1);
  auto* tasks_gen = tasks_cmd->add_subcommand("gen", "Generate a task suite over an archive");
  s.add(*tasks_gen, "archive", "", "Phantom archive directory");
  s.add(*tasks_gen, "suite", "", "Output suite directory");
  s.add(*tasks_gen, "per-type", "10", "Tasks per task type");
  s.add(*tasks_gen, "task-seed", "7", "Suite seed");

  auto* serve = app.add_subcommand("serve", "Serve the HTTP tool bridge");
  s.add(*serve, "archive", "", "Phantom archive directory");
  s.add(*serve, "suite", "", "Suite directory");
  s.add(*serve, "host", "127.0.0.1", "Bind address");
  s.add(*serve, "port", "8765", "Port");

  auto* run = app.add_subcommand("run", "Run a suite with an agent");
  s.add(*run, "archive", "", "Phantom archive directory");
  s.add(*run, "suite", "", "Suite directory");
  s.add(*run, "out", "", "Run output directory");
  s.add(*run, "agent", "oracle", "oracle | random | external");
  s.add(*run, "parallelism", "1", "Concurrent episodes");
  s.add(*run, "agent-seed", "7", "Seed for the random agent");
  s.add(*run, "base-url", "http://127.0.0.1:8000/v1", "Chat-completions endpoint (external agent)");
  s.add(*run, "model", "default", "Model name (external agent)");
  s.add(*run, "api-key-env", "OPENAI_API_KEY", "Environment variable holding the API key");
  s.add(*run, "temperature", "0", "Sampling temperature");
  s.add(*run, "max-tokens", "20048", "Output token cap per request");
  s.add(*run, "task", "", "Run only this task id");

  auto* score = app.add_subcommand("score", "Score a run directory");
  s.add(*score, "archive", "", "Phantom archive directory");
  s.add(*score, "suite", "", "Suite directory");
  s.add(*score, "run", "", "Run directory (holds trajectories/)");
  s.add(*score, "out", "", "Where scores.csv and report.txt go (default: the run directory)");

  auto* report = app.add_subcommand("report", "Print the tier table for a scored run");
  s.add(*report, "suite", "", "Suite directory");
  s.add(*report, "scores", "", "scores.csv");

  auto* repl = app.add_subcommand("repl", "Play an episode by typing tool calls");
  s.add(*repl, "archive", "", "Phantom archive directory");
  s.add(*repl, "suite", "", "Suite directory");
  s.add(*repl, "task", "", "Task id");
  s.add(*repl, "log", "", "Trajectory output file (default: <task>.jsonl)");

  try {
    app.parse(argc, argv);
    s.resolve(config);

    if (phantom_gen->parsed()) {
      phantom::ArchiveConfig cfg;
      cfg.seed = static_cast<std::uint64_t>(s.integer("seed"));
      cfg.ct_families = static_cast<int>(s.integer("ct"));
      cfg.mr_families = static_cast<int>(s.integer("mr"));
      cfg.longitudinal_families = static_cast<int>(s.integer("longitudinal"));
      cfg.rows = cfg.cols = static_cast<int>(s.integer("size"));
      cfg.slices = static_cast<int>(s.integer("slices"));
      auto manifest = phantom::write_archive(s.required("out"), cfg);
      out << "wrote " << manifest["families"].size() << " families to " << s.str("out") << "\n";
    } else if (tasks_gen->parsed()) {
      auto l = load(s.required("archive"));
      tasks::SuiteConfig cfg{static_cast<std::uint64_t>(s.integer("task-seed")), static_cast<int>(s.integer("per-type"))};
      auto suite = tasks::generate_suite(*l.store, *l.truth, cfg);
      tasks::write_suite(s.required("suite"), suite, cfg);
      out << "wrote " << suite.size() << " tasks to " << s.str("suite") << "\n";
    } else if (serve->parsed()) {
      auto l = load(s.required("archive"));
      bridge::Bridge b(l.env(), tasks::load_suite(s.required("suite")));
      httplib::Server server;
      b.mount(server);
      out << "listening on " << s.str("host") << ":" << s.str("port") << std::endl;
      if (!server.listen(s.str("host"), static_cast<int>(s.integer("port"))))
        throw Error(ErrorCode::IoError, "cannot listen on " + s.str("host") + ":" + s.str("port"));
    } else if (run->parsed()) {
      auto l = load(s.required("archive"));
      auto suite = tasks::load_suite(s.required("suite"));
      if (!s.str("task").empty()) {
        std::erase_if(suite, [&](const tasks::TaskSpec& t) { return t.task_id != s.str("task"); });
        if (suite.empty()) throw Error(ErrorCode::UnknownUID, "task: " + s.str("task"));
      }
      const auto agent = s.str("agent");
      runner::AgentFactory factory;
      if (agent == "oracle") {
        factory = runner::oracle_policy(l.env());
      } else if (agent == "random") {
        factory = runner::random_policy(l.env(), static_cast<std::uint64_t>(s.integer("agent-seed")));
      } else if (agent == "external") {
        llm::EndpointConfig cfg;
        cfg.base_url = s.str("base-url");
        cfg.model = s.str("model");
        cfg.api_key_env = s.str("api-key-env");
        cfg.temperature = s.number("temperature");
        cfg.max_output_tokens = static_cast<int>(s.integer("max-tokens"));
        factory = llm::chat_policy(cfg);
      } else {
        throw CLI::ValidationError("--agent", "must be oracle, random or external");
      }
      const auto parallelism = s.integer("parallelism");
      if (parallelism < 1) throw CLI::ValidationError("--parallelism", "must be >= 1");
      auto trajectories = runner::run_suite(suite, factory, l.env(), static_cast<int>(parallelism));
      const fs::path dir = s.required("out");
      runner::write_trajectories(dir / "trajectories", trajectories);
      int aborted = 0;
      for (const auto& t : trajectories) aborted += t.aborted;
      out << "ran " << trajectories.size() << " episodes (" << aborted << " aborted) into " << dir.string() << "\n";
    } else if (score->parsed()) {
      const auto out_dir = s.str("out").empty() ? s.required("run") : s.str("out");
      auto r = score_run(s.required("archive"), s.required("suite"), s.required("run"), out_dir);
      out << scoring::report_text(r);
    } else if (report->parsed()) {
      auto cards = read_scores_csv(phantom::read_text(s.required("scores")));
      out << scoring::report_text(scoring::composite_and_report(cards, tasks::load_suite(s.required("suite"))));
    } else if (repl->parsed()) {
      auto l = load(s.required("archive"));
      auto suite = tasks::load_suite(s.required("suite"));
      auto it = std::find_if(suite.begin(), suite.end(), [&](const auto& t) { return t.task_id == s.str("task"); });
      if (it == suite.end()) throw Error(ErrorCode::UnknownUID, "task: " + s.required("task"));
      out << "Type '<tool> <json args>', 'tools', or 'say <text>' to finish.\n";
      runner::ReplAgent agent(in, out);
      auto t = runner::run_episode(*it, agent, l.env());
      const auto log = s.str("log").empty() ? it->task_id + ".jsonl" : s.str("log");
      phantom::write_text(log, traj::to_jsonl(t));
      auto card = scoring::score_task(*it, t, *l.truth);
      out << "termination " << traj::to_string(t.termination) << "; P " << card.P << " E " << card.E << " O " << card.O
          << " S " << card.S << "; trajectory written to " << log << "\n";
    }
    return 0;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace radgym::cli
