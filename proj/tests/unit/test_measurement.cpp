#include <random>

#include <gtest/gtest.h>

#include "../support/generators.hpp"
#include "dsm/measurement/descriptor.hpp"
#include "dsm/measurement/message.hpp"
#include "dsm/measurement/topic.hpp"

using namespace dsm;

namespace {

MeasurementMessage feature_message() {
  MeasurementMessage m;
  m.node_id = "node07";
  m.channel = "vib_head_x";
  m.seq = 3;
  m.t_acq_us = 1700000000000000;
  m.mode = ProcessingMode::features;
  m.unit = "m/s²";
  m.fs_hz = 1000;
  m.window_len = 256;
  m.payload = FeaturePayload{{{"rms", 0.5}}};
  return m;
}

Errc code_of(auto &&fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::io_error;
}

std::string subject_of(auto &&fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.subject();
  }
  return "<none>";
}

} // namespace

TEST(Quantity, EveryKindHasOneCanonicalUnit) {
  for (auto k : all_quantity_kinds) {
    auto back = kind_from_unit(canonical_unit(k));
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, k);
  }
  EXPECT_FALSE(kind_from_unit("m/s^2"));
  EXPECT_FALSE(kind_from_unit("degC"));
}

TEST(Envelope, FeatureMessageLayout) {
  auto bytes = encode_message(feature_message());
  EXPECT_NE(bytes.find("\"mode\":2"), std::string::npos);
  EXPECT_NE(bytes.find("\"payload\":{\"features\":{\"rms\":0.5}}"),
            std::string::npos);
  EXPECT_EQ(bytes,
            "{\"node_id\":\"node07\",\"channel\":\"vib_head_x\",\"seq\":3,"
            "\"t_acq_us\":1700000000000000,\"mode\":2,\"unit\":\"m/s²\","
            "\"fs_hz\":1000,\"window_len\":256,"
            "\"payload\":{\"features\":{\"rms\":0.5}}}");
}

TEST(Envelope, EmptyRawPayloadViolatesWindowLen) {
  auto m = feature_message();
  m.mode = ProcessingMode::raw;
  m.payload = RawPayload{};
  m.window_len = 0;
  EXPECT_EQ(subject_of([&] { encode_message(m); }), "window_len");
  m.window_len = 4;
  EXPECT_EQ(code_of([&] { encode_message(m); }), Errc::invariant_violation);
  EXPECT_EQ(subject_of([&] { encode_message(m); }), "window_len");
}

TEST(Envelope, DecodeRejectsMissingTimestamp) {
  std::string doc = encode_message(feature_message());
  auto pos = doc.find("\"t_acq_us\"");
  auto end = doc.find(',', pos);
  doc.erase(pos, end - pos + 1);
  EXPECT_EQ(code_of([&] { decode_message(doc); }), Errc::schema_violation);
  EXPECT_EQ(subject_of([&] { decode_message(doc); }), "t_acq_us");
}

TEST(Envelope, DecodeRejectsModePayloadMismatch) {
  auto m = feature_message();
  m.mode = ProcessingMode::raw;
  m.payload = RawPayload{{1.0, 2.0}};
  m.window_len = 2;
  std::string doc = encode_message(m);
  doc.replace(doc.find("\"mode\":1"), 8, "\"mode\":2");
  EXPECT_EQ(code_of([&] { decode_message(doc); }), Errc::invariant_violation);
  EXPECT_EQ(subject_of([&] { decode_message(doc); }), "mode");
}

TEST(Envelope, DecodeRejectsUnknownKeysAndGarbage) {
  std::string doc = encode_message(feature_message());
  std::string extra = doc.substr(0, doc.size() - 1) + ",\"note\":\"x\"}";
  EXPECT_EQ(code_of([&] { decode_message(extra); }), Errc::schema_violation);
  EXPECT_EQ(code_of([&] { decode_message("{not json"); }),
            Errc::malformed_document);
  EXPECT_EQ(code_of([&] { decode_message("[1,2]"); }), Errc::schema_violation);
}

TEST(Envelope, UnknownUnitRejected) {
  std::string doc = encode_message(feature_message());
  doc.replace(doc.find("m/s²"), std::string("m/s²").size(), "g");
  EXPECT_EQ(subject_of([&] { decode_message(doc); }), "unit");
}

TEST(Envelope, NegativeZeroSurvivesRoundTrip) {
  auto m = feature_message();
  m.payload = FeaturePayload{{{"mean", -0.0}}};
  auto bytes = encode_message(m);
  auto back = decode_message(bytes);
  EXPECT_EQ(encode_message(back), bytes);
  EXPECT_TRUE(std::signbit(std::get<FeaturePayload>(back.payload).features["mean"]));
}

TEST(EnvelopeProperty, RoundTripIsIdentityAndCanonical) {
  std::mt19937_64 rng(20240611);
  for (int i = 0; i < 2000; ++i) {
    auto m = dsm::testing::random_message(rng);
    auto bytes = encode_message(m);
    auto back = decode_message(bytes);
    ASSERT_EQ(back, m) << bytes;
    ASSERT_EQ(encode_message(back), bytes);
  }
}

TEST(EnvelopeProperty, MutatedDocumentsRejectedWithStructuredError) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 500; ++i) {
    auto doc = encode_message(dsm::testing::random_message(rng));
    auto bad = dsm::testing::mutate_document(doc, rng);
    try {
      decode_message(bad);
      FAIL() << "accepted: " << bad;
    } catch (const Error &e) {
      auto c = e.code();
      EXPECT_TRUE(c == Errc::malformed_document || c == Errc::schema_violation ||
                  c == Errc::invariant_violation);
    }
  }
}

TEST(Topic, RenderAndParse) {
  auto t = build_topic("plant1", "node07", "vib_head_x", TopicKind::features);
  EXPECT_EQ(render(t), "dsm/v1/plant1/node07/vib_head_x/features");
  EXPECT_EQ(parse_topic(render(t)), t);

  auto cmd = parse_topic("dsm/v1/plant1/node07/_node/cmd");
  EXPECT_EQ(cmd.kind, TopicKind::cmd);
  EXPECT_EQ(cmd.channel, "_node");
}

TEST(Topic, RejectsOtherVersionsAndBadTokens) {
  EXPECT_EQ(subject_of([] { parse_topic("dsm/v2/plant1/n/c/raw"); }), "version");
  EXPECT_EQ(subject_of([] { parse_topic("dsm/v1/Plant1/n/c/raw"); }), "site");
  EXPECT_EQ(subject_of([] { parse_topic("dsm/v1/p/n/c/blob"); }), "kind");
  EXPECT_EQ(subject_of([] { parse_topic("dsm/v1/p/n/c"); }), "kind");
  EXPECT_EQ(subject_of([] { parse_topic("dsm/v1/p/n/vib/cmd"); }), "channel");
  EXPECT_EQ(code_of([] { build_topic("p", std::string(33, 'a'), "c", TopicKind::raw); }),
            Errc::bad_token);
}

TEST(TopicProperty, ParseInvertsRender) {
  std::mt19937_64 rng(7);
  const TopicKind kinds[] = {TopicKind::raw, TopicKind::features, TopicKind::events,
                             TopicKind::cmd, TopicKind::sync};
  for (int i = 0; i < 1000; ++i) {
    auto kind = kinds[i % 5];
    auto channel = is_node_scoped(kind) ? std::string("_node") : dsm::testing::random_token(rng);
    auto t = build_topic(dsm::testing::random_token(rng), dsm::testing::random_token(rng), channel, kind);
    ASSERT_EQ(parse_topic(render(t)), t);
  }
}

TEST(Descriptor, TriAxialVibrationChannelIsValid) {
  ChannelDescriptor d;
  d.topic = build_topic("plant1", "head", "vib_head_x", TopicKind::features);
  d.quantity = {QuantityKind::acceleration};
  d.range_min = -160;
  d.range_max = 160;
  d.fs_hz = 1000;
  d.window = 256;
  d.sensor_model = "ADXL345";
  EXPECT_TRUE(validate_descriptor(d).empty());

  d.range_min = d.range_max = 5;
  d.window = 0;
  auto v = validate_descriptor(d);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0], DescriptorViolation::range_empty);
  EXPECT_EQ(v[1], DescriptorViolation::window_zero);
}

TEST(Descriptor, JsonRoundTripAndRegistry) {
  ChannelDescriptor d;
  d.topic = build_topic("plant1", "vacuum", "airflow_speed", TopicKind::features);
  d.quantity = {QuantityKind::air_speed};
  d.range_min = 0;
  d.range_max = 30;
  d.fs_hz = 125;
  d.window = 32;
  auto back = descriptor_from_json(descriptor_to_json(d));
  EXPECT_EQ(back.topic, d.topic);
  EXPECT_EQ(back.window, 32u);

  DescriptorRegistry reg;
  EXPECT_TRUE(reg.add(d).empty());
  MeasurementMessage m;
  m.node_id = "vacuum";
  m.channel = "airflow_speed";
  m.unit = "m/s";
  m.fs_hz = 125;
  EXPECT_TRUE(reg.conforms("plant1", m));
  m.unit = "hPa";
  EXPECT_FALSE(reg.conforms("plant1", m));
}

TEST(SeqMonitor, DetectsGapsAndRegressions) {
  SeqMonitor mon;
  auto m = feature_message();
  m.seq = 0;
  EXPECT_EQ(mon.observe(m), SeqMonitor::Verdict::first);
  m.seq = 1;
  EXPECT_EQ(mon.observe(m), SeqMonitor::Verdict::in_order);
  m.seq = 4;
  EXPECT_EQ(mon.observe(m), SeqMonitor::Verdict::gap);
  EXPECT_EQ(mon.missing(), 2u);
  m.seq = 2;
  EXPECT_EQ(mon.observe(m), SeqMonitor::Verdict::regression);
}
