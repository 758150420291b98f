#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dsm/app/commands.hpp"

using namespace dsm;
using dsm::app::CliArgs;

namespace {

void add_common(CLI::App *sub, CliArgs &a, bool with_run_flags) {
  sub->add_option("--out", a.out, "output directory");
  if (!with_run_flags)
    return;
  sub->add_option("--scenario", a.scenario, "scenario (campaign for train) JSON");
  sub->add_option("--graph", a.graph, "wires graph JSON");
  sub->add_option("--nodes", a.nodes, "node config directory (default: <scenario dir>/nodes)");
  sub->add_option("--seed", a.seed, "overrides the scenario seed");
  sub->add_option("--mode", a.mode, "processing mode for every sensor node")->check(CLI::Range(1, 3));
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Distributed smart measurement desk: plant, sensor nodes, edge gateway and cloud sink"};
  app.require_subcommand(1);
  CliArgs a;
  std::string model_file;

  auto *run = app.add_subcommand("run", "run one session and write its artifacts and report");
  add_common(run, a, true);
  run->add_option("--duration", a.duration, "seconds, overrides the scenario");
  run->add_option("--gateway", a.gateway, "serve gateway admin HTTP here and run in wall-clock time");
  run->add_option("--sink", a.sink, "remote cloud sink address (default: in-process sink under --out)");
  run->add_option("--model", a.model, "model file for score stages");

  auto *cmp = app.add_subcommand("compare-modes", "run the scenario under modes 1, 2 and 3");
  add_common(cmp, a, true);
  cmp->add_option("--duration", a.duration, "seconds, overrides the scenario");

  auto *train = app.add_subcommand("train", "collect a campaign through the graph and fit the model");
  add_common(train, a, true);

  auto *deploy = app.add_subcommand("deploy", "upload a model file to a running gateway");
  deploy->add_option("model", model_file, "model file")->required();
  deploy->add_option("--gateway", a.gateway, "gateway admin address")->required();

  auto *exp = app.add_subcommand("export", "write the labeled dataset from a sink");
  exp->add_option("--out", a.out, "run directory whose sink/ is read; dataset.ndjson is written there");
  exp->add_option("--sink", a.sink, "read from a sink over HTTP instead");
  exp->add_option("--session", a.session, "session filter: id, a,b or prefix*");

  auto *rep = app.add_subcommand("report", "rebuild the report from a run directory");
  rep->add_option("--out", a.out, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      std::cout << app::report_text(app::cmd_run(a));
    } else if (cmp->parsed()) {
      std::cout << app::compare_text(app::cmd_compare_modes(a));
    } else if (train->parsed()) {
      std::cout << app::training_text(app::cmd_train(a));
    } else if (deploy->parsed()) {
      auto version = app::cmd_deploy(model_file, a.gateway);
      std::cout << "active version " << version << "\n";
    } else if (exp->parsed()) {
      auto text = app::cmd_export(a);
      std::filesystem::path dir = a.out.empty() ? "run" : a.out;
      std::filesystem::create_directories(dir);
      std::ofstream(dir / "dataset.ndjson", std::ios::binary | std::ios::trunc) << text;
      std::cout << std::count(text.begin(), text.end(), '\n') << " records -> " << (dir / "dataset.ndjson").string()
                << "\n";
    } else if (rep->parsed()) {
      std::cout << app::report_text(app::cmd_report(a));
    }
  } catch (const Error &e) {
    std::cerr << "dsm: " << e.what() << "\n";
    return app::exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::cerr << "dsm: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
