#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dsm/app/commands.hpp"

using namespace dsm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path configs = DSM_CONFIG_DIR;

fs::path scratch(const std::string &name) {
  auto p = fs::temp_directory_path() / "dsm_test_app" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// short quiet run; the shipped scenarios put their episode after 30 s
app::DeskOptions short_desk(const fs::path &out, const std::string &graph = "phase1.json") {
  app::DeskOptions d;
  d.scenario = app::load_scenario_file(configs / "scenario.json");
  d.scenario.duration_s = 6;
  d.scenario.defect_episodes.clear();
  d.graph = app::load_graph_file(configs / "graphs" / graph, configs / "model.json");
  d.nodes = app::load_nodes_dir(configs / "nodes");
  d.out = out;
  return d;
}

} // namespace

TEST(Report, PercentileIsNearestRank) {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_EQ(app::percentile(v, 50), 5);
  EXPECT_EQ(app::percentile(v, 95), 10);
  EXPECT_EQ(app::percentile(v, 99), 10);
  EXPECT_EQ(app::percentile(v, 0), 1);
  EXPECT_EQ(app::percentile(v, 100), 10);
  EXPECT_EQ(app::percentile({}, 50), 0);
  EXPECT_EQ(app::percentile({4.5}, 99), 4.5);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(app::exit_code_for(Errc::config_invalid), 2);
  EXPECT_EQ(app::exit_code_for(Errc::graph_invalid), 2);
  EXPECT_EQ(app::exit_code_for(Errc::parse_error), 2);
  EXPECT_EQ(app::exit_code_for(Errc::gateway_unreachable), 3);
  EXPECT_EQ(app::exit_code_for(Errc::startup_failure), 3);
  EXPECT_EQ(app::exit_code_for(Errc::invalid_model_file), 3);
  EXPECT_EQ(app::exit_code_for(Errc::no_sessions), 3);
}

TEST(Desk, GraphWithCycleIsRejected) {
  auto dir = scratch("badgraph");
  auto g = app::load_json_file(configs / "graphs" / "phase1.json");
  // feed the join back into one of its own inputs
  g["edges"].push_back({{"from", "join"}, {"to", "vib_rms"}});
  std::ofstream(dir / "g.json") << g.dump();
  try {
    app::load_graph_file(dir / "g.json");
    FAIL() << "cycle accepted";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::graph_invalid);
  }
  std::ofstream(dir / "broken.json") << "{\"stages\": [";
  try {
    app::load_graph_file(dir / "broken.json");
    FAIL() << "broken JSON accepted";
  } catch (const Error &e) {
    EXPECT_EQ(app::exit_code_for(e.code()), 2);
  }
}

TEST(Desk, SameSeedSameBytes) {
  std::string first[4];
  for (int i = 0; i < 2; ++i) {
    auto dir = scratch("det" + std::to_string(i));
    app::run_desk(short_desk(dir, "phase2.json"));
    int k = 0;
    for (const char *f : {"session.ndjson", "traffic.ndjson", "deliveries.ndjson", "scored.ndjson"}) {
      auto s = slurp(dir / f);
      EXPECT_FALSE(s.empty()) << f;
      if (i == 0)
        first[k] = s;
      else
        EXPECT_EQ(first[k], s) << f;
      ++k;
    }
  }
}

TEST(Desk, ReportTalliesMatchFrameLog) {
  auto dir = scratch("tally");
  app::run_desk(short_desk(dir));
  auto rep = app::build_report(dir);
  std::map<std::string, std::uint64_t> bytes, msgs, values;
  std::ifstream in(dir / "traffic.ndjson");
  std::string line;
  while (std::getline(in, line)) {
    auto t = json::parse(line);
    if (t["values"].get<std::uint64_t>() == 0)
      continue;
    auto n = t["node"].get<std::string>();
    bytes[n] += t["frame_bytes"].get<std::uint64_t>();
    values[n] += t["values"].get<std::uint64_t>();
    ++msgs[n];
  }
  std::uint64_t sensor = 0;
  ASSERT_EQ(rep["nodes"].size(), 4u);
  for (const auto &n : rep["nodes"]) {
    auto id = n["node_id"].get<std::string>();
    EXPECT_EQ(n["bytes"].get<std::uint64_t>(), bytes[id]) << id;
    EXPECT_EQ(n["messages"].get<std::uint64_t>(), msgs[id]) << id;
    EXPECT_EQ(n["values"].get<std::uint64_t>(), values[id]) << id;
    if (n["kind"] == "sensor")
      sensor += bytes[id];
  }
  EXPECT_EQ(rep["sensor_bytes"].get<std::uint64_t>(), sensor);
  EXPECT_TRUE(rep["pipeline"]["conserved"].get<bool>());
}

TEST(Desk, ValuesPerVibrationMessageFollowMode) {
  // mode 1: raw window, mode 2: 7 features, mode 3: decimated 32 samples + 6 features
  const std::map<int, std::uint64_t> expected{{1, 256}, {2, 7}, {3, 38}};
  for (auto [mode, want] : expected) {
    auto dir = scratch("mode" + std::to_string(mode));
    auto d = short_desk(dir);
    d.mode = static_cast<ProcessingMode>(mode);
    app::run_desk(d);
    std::ifstream in(dir / "traffic.ndjson");
    std::string line;
    int seen = 0;
    while (std::getline(in, line)) {
      auto t = json::parse(line);
      if (t["node"] != "head" || t["values"].get<std::uint64_t>() == 0)
        continue;
      EXPECT_EQ(t["values"].get<std::uint64_t>(), want) << "mode " << mode;
      ++seen;
    }
    EXPECT_GT(seen, 0);
  }
}

TEST(Desk, ScoredRiskEqualsOfflinePrediction) {
  auto dir = scratch("score");
  app::run_desk(short_desk(dir, "phase2.json"));
  auto m = quality::load_model((configs / "model.json").string());
  auto recs = app::read_ndjson(dir / "scored.ndjson");
  ASSERT_FALSE(recs.empty());
  for (const auto &r : recs) {
    quality::FeatureValues x;
    for (const auto &[k, v] : r["values"].items())
      x[k] = v.get<double>();
    EXPECT_NEAR(r["values"]["risk"].get<double>(), quality::predict_risk(m, x), 1e-12);
    EXPECT_EQ(r["values"]["risk_alarm"].get<double>() >= 1.0, r["values"]["risk"].get<double>() >= 0.7);
    EXPECT_EQ(r["tags"]["model_version"], m.version);
  }
}

TEST(Gateway, DeployValidAndCorrupt) {
  auto slot = std::make_shared<quality::ModelSlot>(quality::load_model((configs / "model.json").string()));
  app::GatewayAdmin admin(slot, [] { return std::string("dsm_up 1\n"); });
  admin.start();
  auto addr = "127.0.0.1:" + std::to_string(admin.port());
  auto dir = scratch("deploy");

  auto m = *slot->get();
  m.version = "m-next";
  m.w[0] = -m.w[0];
  quality::save_model(m, (dir / "next.json").string());
  EXPECT_EQ(app::cmd_deploy((dir / "next.json").string(), addr), "m-next");
  EXPECT_EQ(slot->get()->version, "m-next");
  EXPECT_EQ(slot->get()->w[0], m.w[0]);

  std::ofstream(dir / "corrupt.json") << "{\"version\": \"m-bad\", \"w\": [";
  try {
    app::cmd_deploy((dir / "corrupt.json").string(), addr);
    FAIL() << "corrupt model deployed";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::invalid_model_file);
    EXPECT_NE(std::string(e.what()).find("m-next"), std::string::npos);
  }
  EXPECT_EQ(slot->get()->version, "m-next");

  admin.stop();
  try {
    app::cmd_deploy((dir / "next.json").string(), addr);
    FAIL() << "deploy to a stopped gateway succeeded";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::gateway_unreachable);
  }
}

TEST(Train, SmallCampaignIsDeterministicAndExportFilters) {
  auto dir = scratch("train");
  auto campaign = app::load_json_file(configs / "campaign.json");
  campaign["sessions"] = 3;
  campaign["session_s"] = 6;
  campaign["episode_start_hi_s"] = 2;
  campaign["training"]["epochs"] = 200;
  std::ofstream(dir / "campaign.json") << campaign.dump();

  std::string model_text[2];
  json summary;
  for (int i = 0; i < 2; ++i) {
    app::CliArgs a;
    a.scenario = (dir / "campaign.json").string();
    a.graph = (configs / "graphs" / "phase1.json").string();
    a.nodes = (configs / "nodes").string();
    a.out = (dir / ("out" + std::to_string(i))).string();
    std::ostringstream log;
    summary = app::cmd_train(a, log);
    model_text[i] = slurp(fs::path(a.out) / "model.json");
  }
  EXPECT_EQ(model_text[0], model_text[1]);
  EXPECT_GT(summary["rows"].get<std::size_t>(), 30u);
  auto m = quality::model_from_text(model_text[0]);
  EXPECT_EQ(m.version.rfind("m-", 0), 0u);
  EXPECT_EQ(m.feature_names.size(), 4u);

  app::CliArgs a;
  a.out = (dir / "out0").string();
  auto all = app::cmd_export(a);
  std::set<std::string> sessions;
  std::istringstream in(all);
  std::string line;
  while (std::getline(in, line))
    sessions.insert(json::parse(line)["session_id"].get<std::string>());
  ASSERT_EQ(sessions.size(), 3u);
  a.session = *sessions.begin();
  std::istringstream one(app::cmd_export(a));
  int rows = 0;
  while (std::getline(one, line)) {
    EXPECT_EQ(json::parse(line)["session_id"], *sessions.begin());
    ++rows;
  }
  EXPECT_GT(rows, 0);
  a.session = "no-such-session";
  EXPECT_THROW(app::cmd_export(a), Error);
}
