#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "dsm/node/sensor_node.hpp"

using namespace dsm;
using namespace dsm::node;

namespace {

class FnSource : public SignalSource {
public:
  explicit FnSource(std::function<double(const std::string &, std::int64_t)> f, std::int64_t end = INT64_MAX)
      : f_(std::move(f)), end_(end) {}
  double sample(const std::string &signal, std::int64_t t) override {
    if (t >= end_)
      throw Error(Errc::source_exhausted, signal);
    return f_(signal, t);
  }

private:
  std::function<double(const std::string &, std::int64_t)> f_;
  std::int64_t end_;
};

NodeConfig one_channel(double fs, std::uint32_t window, ProcessingMode mode, std::size_t decimation = 8) {
  NodeConfig c;
  c.node_id = "node07";
  c.site = "plant1";
  c.mode = mode;
  c.decimation_factor = decimation;
  NodeChannel ch;
  ch.descriptor.topic = build_topic("plant1", "node07", "vib_head_x", TopicKind::features);
  ch.descriptor.quantity = {QuantityKind::acceleration};
  ch.descriptor.range_min = -40;
  ch.descriptor.range_max = 40;
  ch.descriptor.fs_hz = fs;
  ch.descriptor.window = window;
  ch.descriptor.mode = mode;
  ch.signal = "vib_x";
  c.channels.push_back(ch);
  return c;
}

double sine50(const std::string &, std::int64_t t) {
  return std::sin(2 * std::numbers::pi * 50.0 * static_cast<double>(t) * 1e-6) + 0.1;
}

constexpr std::int64_t t0 = 1'700'000'000'000'000;

std::vector<MeasurementMessage> decoded(const CaptureTransport &t, TopicKind kind) {
  std::vector<MeasurementMessage> out;
  for (const auto &s : t.sent())
    if (parse_topic(s.topic).kind == kind && parse_topic(s.topic).channel != "_node")
      out.push_back(decode_message(s.payload));
  return out;
}

} // namespace

TEST(Sync, WorkedExample) {
  EXPECT_EQ(sync_exchange(100, 110, 111, 105), (SyncEstimate{8, 4}));
  EXPECT_THROW(sync_exchange(100, 110, 111, 99), Error);
  EXPECT_THROW(sync_exchange(100, 110, 109, 120), Error);
}

TEST(Sync, SymmetricDelayRecoversOffsetExactly) {
  for (std::int64_t theta : {-5000, -1, 0, 7, 123456}) {
    for (std::int64_t d : {0, 1, 250, 5000}) {
      std::int64_t T = 1'000'000;
      auto t1 = T + theta;
      auto t2 = T + d;
      auto t3 = t2 + 17;
      auto t4 = t3 + d + theta;
      EXPECT_EQ(sync_exchange(t1, t2, t3, t4).offset_us, -theta);
    }
  }
}

TEST(Sync, AsymmetricDelayBiasIsHalfTheDifference) {
  // d_up = 6, d_down = 2, no true offset.
  EXPECT_EQ(sync_exchange(0, 6, 6, 8).offset_us, 2);
}

TEST(SyncProperty, ErrorAfterCorrectionIsHalfAsymmetry) {
  for (std::int64_t theta = -20000; theta <= 20000; theta += 3331) {
    for (std::int64_t up = 0; up <= 9000; up += 1500) {
      for (std::int64_t down = 0; down <= 9000; down += 1750) {
        ClockModel clock{theta, 0.0, 0, 0};
        const std::int64_t T = 5'000'000;
        auto t1 = clock.corrected_us(T);
        auto t2 = T + up;
        auto t3 = t2 + 40;
        auto t4 = clock.corrected_us(t3 + down);
        apply_sync(clock, sync_exchange(t1, t2, t3, t4));
        auto err = clock.corrected_us(T) - T;
        auto expected = static_cast<double>(up - down) / 2.0;
        ASSERT_LE(std::abs(static_cast<double>(err) - expected), 1.0)
            << theta << " " << up << " " << down;
      }
    }
  }
}

TEST(Clock, DriftBoundEnforced) {
  ClockModel c;
  c.drift_ppm = 501;
  EXPECT_THROW(c.validate(), Error);
  c.drift_ppm = -500;
  EXPECT_NO_THROW(c.validate());
}

TEST(ApplyMode, PayloadShapes) {
  std::vector<double> w(256);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = std::sin(0.3 * i) + 0.01 * i;
  auto raw = apply_mode(w, ProcessingMode::raw, 8, 1000);
  EXPECT_EQ(value_count(raw), 256u);
  auto feat = apply_mode(w, ProcessingMode::features, 8, 1000);
  EXPECT_EQ(value_count(feat), 7u);
  auto hybrid = apply_mode(w, ProcessingMode::hybrid, 8, 1000);
  const auto &h = std::get<HybridPayload>(hybrid);
  auto oracle = dsm::testing::naive_block_mean(w, 8);
  ASSERT_EQ(h.decimated.size(), oracle.size());
  EXPECT_EQ(h.decimated.size(), 32u);
  for (std::size_t i = 0; i < oracle.size(); ++i)
    EXPECT_NEAR(h.decimated[i], oracle[i], 1e-12);
  EXPECT_EQ(h.features.size(), 6u);
  EXPECT_EQ(h.features.count("dom_freq_hz"), 0u);
  EXPECT_EQ(value_count(hybrid), 38u);
}

TEST(ApplyModeProperty, ValueCountOrdering) {
  std::mt19937_64 rng(4);
  for (std::size_t n : {16u, 32u, 64u, 256u, 512u}) {
    std::vector<double> w(n);
    for (auto &v : w)
      v = std::normal_distribution<double>(0, 1)(rng);
    for (std::size_t f = 2; f <= n / 2; f *= 2) {
      auto c1 = value_count(apply_mode(w, ProcessingMode::raw, f, 1000));
      auto c2 = value_count(apply_mode(w, ProcessingMode::features, f, 1000));
      auto c3 = value_count(apply_mode(w, ProcessingMode::hybrid, f, 1000));
      ASSERT_LT(c2, c3) << n << " " << f;
      ASSERT_LT(c3, c1) << n << " " << f;
    }
  }
}

TEST(Acquisition, OneSecondOneMessage) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src(sine50);
  SensorNode node(one_channel(256, 256, ProcessingMode::features), tr, [&] { return now; }, &src);
  run_acquisition_loop(node, t0, 250'000, t0 + 1'000'000, [&](std::int64_t t) { now = t; });
  auto msgs = decoded(tr, TopicKind::features);
  ASSERT_EQ(msgs.size(), 1u);
  EXPECT_EQ(msgs[0].seq, 0u);
  EXPECT_EQ(msgs[0].t_acq_us, t0);
}

TEST(Acquisition, TenSecondsEvenlySpaced) {
  for (double drift : {0.0, 40.0}) {
    CaptureTransport tr;
    std::int64_t now = t0;
    FnSource src(sine50);
    auto cfg = one_channel(256, 256, ProcessingMode::features);
    cfg.clock.drift_ppm = drift;
    cfg.sync_period_s = 1000; // only the initial exchange, which nobody answers
    SensorNode node(cfg, tr, [&] { return now; }, &src);
    run_acquisition_loop(node, t0, 100'000, t0 + 10'000'000, [&](std::int64_t t) { now = t; });
    auto msgs = decoded(tr, TopicKind::features);
    ASSERT_EQ(msgs.size(), 10u);
    for (std::size_t i = 0; i < msgs.size(); ++i) {
      EXPECT_EQ(msgs[i].seq, i);
      if (i) {
        auto dt = msgs[i].t_acq_us - msgs[i - 1].t_acq_us;
        EXPECT_LE(std::abs(dt - 1'000'000), static_cast<std::int64_t>(std::ceil(drift) + 1));
        if (drift == 0.0) {
          EXPECT_EQ(dt, 1'000'000);
        }
      }
    }
  }
}

TEST(Acquisition, SourceExhaustedStopsCleanly) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src(sine50, t0 + 2'500'000);
  SensorNode node(one_channel(256, 256, ProcessingMode::raw), tr, [&] { return now; }, &src);
  run_acquisition_loop(node, t0, 500'000, t0 + 10'000'000, [&](std::int64_t t) { now = t; });
  EXPECT_TRUE(node.exhausted());
  EXPECT_EQ(decoded(tr, TopicKind::raw).size(), 2u);
}

TEST(StoreAndForward, BrokerDownForThreeWindows) {
  CaptureTransport tr;
  tr.set_up(false);
  std::int64_t now = t0;
  FnSource src(sine50);
  SensorNode node(one_channel(1000, 250, ProcessingMode::features, 5), tr, [&] { return now; }, &src);
  node.start(t0);
  for (int w = 1; w <= 3; ++w) {
    now = t0 + w * 250'000;
    node.step(now);
  }
  EXPECT_EQ(node.buffered(), 3u);
  EXPECT_TRUE(tr.sent().empty());
  tr.set_up(true);
  now = t0 + 3 * 250'000 + 1;
  node.step(now);
  auto msgs = decoded(tr, TopicKind::features);
  ASSERT_EQ(msgs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(msgs[i].seq, i);
  EXPECT_EQ(node.buffered(), 0u);
}

TEST(StoreAndForward, OverflowDropsOldest) {
  CaptureTransport tr;
  tr.set_up(false);
  std::int64_t now = t0;
  FnSource src(sine50);
  auto cfg = one_channel(1000, 100, ProcessingMode::features, 5);
  cfg.buffer_capacity = 4;
  SensorNode node(cfg, tr, [&] { return now; }, &src);
  node.start(t0);
  now = t0 + 1'000'000;
  node.step(now); // ten windows into a buffer of four
  EXPECT_EQ(node.stats().dropped_oldest, 6u);
  tr.set_up(true);
  node.step(now);
  auto msgs = decoded(tr, TopicKind::features);
  ASSERT_EQ(msgs.size(), 4u);
  EXPECT_EQ(msgs.front().seq, 6u);
  EXPECT_EQ(msgs.back().seq, 9u);
}

TEST(Commands, SetModeTakesEffectAtNextWindow) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src(sine50);
  SensorNode node(one_channel(1000, 256, ProcessingMode::features), tr, [&] { return now; }, &src);
  node.start(t0);
  now = t0 + 100'000;
  node.step(now); // mid-window
  tr.deliver(node.cmd_topic(), R"({"cmd":"set_mode","args":{"mode":1},"req_id":"r1"})");
  for (int i = 2; i <= 8; ++i) {
    now = t0 + i * 100'000;
    node.step(now);
  }
  std::vector<MeasurementMessage> all;
  for (const auto &s : tr.sent()) {
    auto topic = parse_topic(s.topic);
    if (topic.channel == "vib_head_x" && topic.kind != TopicKind::events)
      all.push_back(decode_message(s.payload));
  }
  ASSERT_GE(all.size(), 3u);
  EXPECT_EQ(all[0].mode, ProcessingMode::features);
  for (std::size_t i = 1; i < all.size(); ++i)
    EXPECT_EQ(all[i].mode, ProcessingMode::raw);
  for (const auto &m : all)
    EXPECT_EQ(mode_of(m.payload), m.mode);
}

TEST(Commands, PingAndRejections) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src(sine50);
  SensorNode node(one_channel(256, 256, ProcessingMode::hybrid), tr, [&] { return now; }, &src);
  node.start(t0);
  tr.deliver(node.cmd_topic(), R"({"cmd":"ping","args":{},"req_id":"p"})");
  tr.deliver(node.cmd_topic(), R"({"cmd":"set_window","args":{"window":250},"req_id":"w"})");
  tr.deliver(node.cmd_topic(), R"({"cmd":"reboot","args":{},"req_id":"x"})");
  tr.deliver(node.cmd_topic(), R"({"cmd":"set_rate","args":{"fs_hz":-3},"req_id":"r"})");
  tr.deliver(node.cmd_topic(), R"(not json)");
  now = t0 + 1;
  node.step(now);
  std::map<std::string, nlohmann::json> acks;
  for (const auto &s : tr.sent())
    if (s.topic == node.ack_topic()) {
      auto j = nlohmann::json::parse(s.payload);
      acks[j["req_id"]] = j;
    }
  ASSERT_EQ(acks.size(), 5u);
  EXPECT_TRUE(acks["p"]["ok"]);
  EXPECT_EQ(acks["p"]["node_id"], "node07");
  EXPECT_EQ(acks["p"]["config_digest"], config_digest(node.config()));
  EXPECT_FALSE(acks["w"]["ok"]);
  EXPECT_NE(acks["w"]["reason"].get<std::string>().find("InvalidValue"), std::string::npos);
  EXPECT_FALSE(acks["x"]["ok"]);
  EXPECT_NE(acks["x"]["reason"].get<std::string>().find("UnknownCommand"), std::string::npos);
  EXPECT_FALSE(acks["r"]["ok"]);
  EXPECT_FALSE(acks[""]["ok"]);
  EXPECT_EQ(node.config().channels[0].descriptor.window, 256u);
}

TEST(Commands, SetWindowAndRateApplyBetweenWindows) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src(sine50);
  SensorNode node(one_channel(1000, 200, ProcessingMode::features, 4), tr, [&] { return now; }, &src);
  node.start(t0);
  now = t0 + 50'000;
  node.step(now);
  tr.deliver(node.cmd_topic(), R"({"cmd":"set_window","args":{"window":100},"req_id":"a"})");
  tr.deliver(node.cmd_topic(), R"({"cmd":"set_rate","args":{"fs_hz":500,"channel":"vib_head_x"},"req_id":"b"})");
  now = t0 + 600'000;
  node.step(now);
  auto msgs = decoded(tr, TopicKind::features);
  ASSERT_EQ(msgs.size(), 3u);
  EXPECT_EQ(msgs[0].window_len, 200u);
  EXPECT_EQ(msgs[0].fs_hz, 1000.0);
  EXPECT_EQ(msgs[1].window_len, 100u);
  EXPECT_EQ(msgs[1].fs_hz, 500.0);
  EXPECT_EQ(msgs[1].t_acq_us, t0 + 200'000);
  EXPECT_EQ(msgs[2].t_acq_us, t0 + 400'000);
}

TEST(NodeSync, ResponseCorrectsClock) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src(sine50);
  auto cfg = one_channel(1000, 250, ProcessingMode::features, 5);
  cfg.clock.true_offset_us = 4321;
  SensorNode node(cfg, tr, [&] { return now; }, &src);
  node.start(t0);
  node.step(t0); // sends the sync request
  auto req = nlohmann::json::parse(tr.sent().at(0).payload);
  ASSERT_EQ(req["type"], "req");
  EXPECT_EQ(req["t1"].get<std::int64_t>(), t0 + 4321);
  nlohmann::json resp{{"type", "resp"}, {"req_id", req["req_id"]}, {"t1", req["t1"]}, {"t2", now}, {"t3", now}};
  tr.deliver(node.sync_topic(), resp.dump());
  now = t0 + 250'000;
  node.step(now);
  EXPECT_EQ(node.stats().syncs, 1u);
  EXPECT_EQ(node.clock().corrected_us(now), now);
}

TEST(Energy, Definitions) {
  EnergyModel zero{0, 0, 0, 1};
  EXPECT_EQ(energy_cost(ProcessingMode::features, 256, 4000, zero).total(), 0.0);
  EnergyModel d;
  EXPECT_EQ(energy_cost(ProcessingMode::raw, 256, 0, d).cpu, 256.0);
  EXPECT_EQ(energy_cost(ProcessingMode::features, 256, 0, d).cpu, 256.0 + 350.0);
  EXPECT_EQ(energy_cost(ProcessingMode::hybrid, 256, 0, d).cpu, 256.0 + 300.0);
  EnergyMeter m(EnergyModel{1, 50, 2, 10000});
  m.add_cpu(ProcessingMode::raw, 100);
  m.add_radio(50);
  EXPECT_DOUBLE_EQ(m.battery_fraction(), 1.0 - 200.0 / 10000.0);
}

TEST(Energy, FeatureModeCheaperIffRadioSavingsExceedFeatureCost) {
  EnergyModel d;
  std::mt19937_64 rng(12);
  std::vector<double> w(256);
  for (auto &v : w)
    v = std::normal_distribution<double>(0, 0.5)(rng);
  auto bytes_for = [&](ProcessingMode mode) {
    MeasurementMessage m;
    m.node_id = "head";
    m.channel = "vib_head_x";
    m.seq = 17;
    m.t_acq_us = t0;
    m.mode = mode;
    m.unit = "m/s²";
    m.fs_hz = 1000;
    m.window_len = 256;
    m.payload = apply_mode(w, mode, 8, 1000);
    auto topic = render(build_topic("plant1", "head", "vib_head_x",
                                    mode == ProcessingMode::raw ? TopicKind::raw : TopicKind::features));
    return mqtt::publish_frame_size(topic.size(), encode_message(m).size(), mode == ProcessingMode::raw ? 0 : 1);
  };
  auto b1 = bytes_for(ProcessingMode::raw);
  auto b2 = bytes_for(ProcessingMode::features);
  auto c1 = energy_cost(ProcessingMode::raw, 256, b1, d).total();
  auto c2 = energy_cost(ProcessingMode::features, 256, b2, d).total();
  bool savings_exceed = d.cost_per_byte_radio * (static_cast<double>(b1) - static_cast<double>(b2)) > 350.0;
  EXPECT_EQ(c2 < c1, savings_exceed);
  EXPECT_TRUE(savings_exceed);
  EXPECT_GT(energy_cost(ProcessingMode::raw, 256, b1, d).radio, energy_cost(ProcessingMode::features, 256, b2, d).radio);
}

TEST(NodeConfig, ParsesAndValidates) {
  auto doc = nlohmann::json::parse(R"({
    "node_id":"head","site":"plant1","mode":3,"decimation_factor":8,
    "clock":{"true_offset_us":1200,"drift_ppm":15},
    "channels":[{"channel":"vib_head_x","signal":"vib_x","quantity":"acceleration",
                 "range":[-39.2,39.2],"fs_hz":1000,"window":256,"sensor_model":"ADXL345",
                 "adc":{"bits":12,"v_min":0,"v_max":3.3,"gain":23.7576,"offset":-39.2}}]})");
  auto c = node_config_from_json(doc);
  EXPECT_EQ(c.mode, ProcessingMode::hybrid);
  EXPECT_EQ(c.channels[0].adc->spec.bits, 12);
  EXPECT_EQ(c.clock.true_offset_us, 1200);

  auto bad = doc;
  bad["channels"][0]["window"] = 250;
  EXPECT_THROW(node_config_from_json(bad), Error);
  bad = doc;
  bad["colour"] = "red";
  EXPECT_THROW(node_config_from_json(bad), Error);
  bad = doc;
  bad["channels"] = nlohmann::json::array();
  EXPECT_THROW(node_config_from_json(bad), Error);
}

TEST(Adc, NodeQuantizesThroughConfiguredChain) {
  CaptureTransport tr;
  std::int64_t now = t0;
  FnSource src([](const std::string &, std::int64_t) { return 0.123456; });
  auto cfg = one_channel(1000, 10, ProcessingMode::raw, 5);
  cfg.channels[0].adc = AdcChain{{8, 0.0, 1.0}, {80.0, -40.0}};
  SensorNode node(cfg, tr, [&] { return now; }, &src);
  run_acquisition_loop(node, t0, 10'000, t0 + 10'000, [&](std::int64_t t) { now = t; });
  auto msgs = decoded(tr, TopicKind::raw);
  ASSERT_EQ(msgs.size(), 1u);
  double v = std::get<RawPayload>(msgs[0].payload).samples[0];
  EXPECT_LE(std::abs(v - 0.123456), 0.5 * 80.0 / 255.0);
  EXPECT_NE(v, 0.123456);
}
